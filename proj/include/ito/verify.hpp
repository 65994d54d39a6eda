#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ito/gradcheck.hpp"

namespace ito {

struct SuiteEntry {
    std::string name;
    GradCheckReport report;
};

struct GradCheckSuiteReport {
    std::vector<SuiteEntry> entries;
    double max_rel_error = 0.0;
    double seconds = 0.0;
    bool passed(double tolerance = 1e-5) const { return max_rel_error < tolerance; }
};

// Central differences at 64-bit against reverse mode for every primitive op (three random
// points each), the CLIP, alignment and fusion losses with their log-temperatures, and the
// full objective through both encoders and fusion on a B=2 toy model.
GradCheckSuiteReport run_gradcheck_suite();

}  // namespace ito
