#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmsc::gradcheck {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    int seeds = 0;
    bool pass = false;
};

// Central finite differences (step 1e-5) against the analytic backwards, for
// every primitive and for the full desk-scale model (S=2, M=2, channels=4,
// input 1x1x12x12). Relative error uses a unit floor:
//   |a - n| / max(1, |a|, |n|).
std::vector<CheckResult> run_suite(std::uint64_t base_seed, int num_seeds);

bool all_pass(const std::vector<CheckResult>& results);

}  // namespace cmsc::gradcheck
