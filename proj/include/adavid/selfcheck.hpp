#pragma once

#include <functional>
#include <string>
#include <vector>

namespace adavid {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Evaluation-configuration FLOPs at D=768, L=12, T=4, N=196: one result per
// row, within 1% of the published value.
std::vector<CheckResult> check_table1();
// Instrumented matmul counter == closed form on T {1,2,4} x N {4,16} x
// D {16,32,64} for every named pattern, joint and space-time.
CheckResult check_flops_reconciliation();
// 20 random draws; every block at every allowed width against the
// materialized sub-model, full width against the straight-line reference.
CheckResult check_slicing_oracles();
// Finite differences through a tiny encoder pair and InfoNCE.
CheckResult check_end_to_end_gradient();
// Width D/4 backward leaves no gradient outside the active slices.
CheckResult check_gradient_locality();
// Decreasing sampler: monotone, allowed widths, layer-1 chi-square at 1%.
CheckResult check_sampler_law();
// Smaller module contracts (loss examples, pooling, io, determinism, ...).
std::vector<CheckResult> check_module_invariants();

// Everything above, in order. `sink` sees each result as soon as it exists.
std::vector<CheckResult> run_selfcheck(const std::function<void(const CheckResult&)>& sink = {});

std::string format_result(const CheckResult& result);

}  // namespace adavid
