#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adasgn {

struct PropertyResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;  // worst error, smallest p-value or agreement rate
    std::string detail;
    double seconds = 0.0;
};

struct VerifyOptions {
    std::size_t grad_seeds = 5;
    std::size_t gumbel_cases = 20;
    std::size_t gumbel_draws = 100000;
    std::size_t cost_sequences = 100;
    // Adds one multiply-add to the largest table entry before checking.
    bool corrupt_flops = false;
};

// Central-difference checks of every differentiable op and module, one
// result per group.
std::vector<PropertyResult> verify_gradients(const VerifyOptions& opts = {});
// Gumbel frequencies against softmax, and hard/relaxed argmax agreement.
std::vector<PropertyResult> verify_gumbel(const VerifyOptions& opts = {});
// Table entries, sequence costs and the reuse shortcut against counters.
std::vector<PropertyResult> verify_flops(const VerifyOptions& opts = {});
// Forced (0,0) and (K-1,L-1) against the fixed pipelines, bit for bit.
std::vector<PropertyResult> verify_forced_policy();
// Checkpoint and skeleton round trips, reuse identity.
std::vector<PropertyResult> verify_round_trips();

std::vector<PropertyResult> verify_all(const VerifyOptions& opts = {});

bool all_passed(const std::vector<PropertyResult>& results);
// One line per property: PASS|FAIL name measured=... detail (seconds).
std::string format_verify_report(const std::vector<PropertyResult>& results);

}  // namespace adasgn
