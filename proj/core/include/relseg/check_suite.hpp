#pragma once

#include <string>
#include <vector>

#include "relseg/models.hpp"

namespace relseg {

/// One assertion (or descriptive measurement) of the equivalence suite.
struct CheckRow {
    std::string criterion;
    std::string preset;
    std::uint64_t seed = 0;
    double value = 0.0;      // measured deviation / magnitude / count
    double tolerance = 0.0;  // pass threshold (meaning depends on criterion)
    bool asserted = true;    // descriptive rows never fail the suite
    bool pass = true;
};

struct CheckOptions {
    std::size_t seed_count = 10;
    std::vector<std::string> presets = {"vgg-mini-2:4", "vgg-mini-3:4"};
    std::size_t input_h = 16, input_w = 16;
    std::size_t num_fg = 4;
    double epsilon = 0.0;  // > 0: conservation rows become descriptive
    /// Fault injection for the suite's own mutation test: evaluate the
    /// explicit decoder with unflipped kernels so equivalence rows must fail.
    bool fault_unflipped_kernels = false;
};

struct CheckReport {
    std::vector<CheckRow> rows;
    bool passed = true;
};

/// Formal equivalence suite: decoder vs reference relevance propagation,
/// LRP-0 vs input-times-gradient, per-layer conservation, the gradient
/// partition at epsilon 0 and 1e-2, and finite-difference checks of both
/// losses end to end.
CheckReport run_check_suite(const CheckOptions& opts);

void write_check_csv(const CheckReport& report, const std::string& path);
std::string format_check_row(const CheckRow& row);

}  // namespace relseg
