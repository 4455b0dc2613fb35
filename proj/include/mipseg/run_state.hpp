#pragma once

#include <limits>
#include <vector>

#include "mipseg/loss.hpp"
#include "mipseg/optim.hpp"
#include "mipseg/rng.hpp"

namespace mipseg {

// Everything a run needs to resume exactly: schedule position, counters,
// optimizer moments, RNG state and the best-epoch weight snapshot.
template <typename T>
struct RunState {
  int epoch = 0;  // completed epochs
  double lr = 0.0;
  BalanceSchedule balance;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int plateau_count = 0;
  int stop_count = 0;
  bool stopped_early = false;
  Rng rng;
  std::vector<std::vector<T>> best_params;  // aligned with the model's param order
  AdamState<T> adam;
};

}  // namespace mipseg
