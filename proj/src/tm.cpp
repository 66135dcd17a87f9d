#include "kws/tm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kws/error.hpp"

namespace kws {

void TmParams::validate() const {
  if (clauses_per_class < 2 || clauses_per_class % 2 != 0) {
    throw ConfigError("clauses_per_class must be even and at least 2");
  }
  if (threshold < 1) throw ConfigError("threshold must be at least 1");
  if (!(s > 1.0)) throw ConfigError("s must be greater than 1");
  if (n_states < 1) throw ConfigError("n_states must be at least 1");
}

BitVector make_literals(const BitVector& features) {
  const std::size_t f = features.size();
  BitVector literals(2 * f);
  for (std::size_t i = 0; i < f; ++i) {
    const bool v = features.get(i);
    literals.set(i, v);
    literals.set(f + i, !v);
  }
  return literals;
}

TaState ta_transition(TaState value, int n_states, TaEvent event, OpCounters& ops) {
  ++ops.ta_updates;
  const bool include = value > n_states;
  int v = value;
  if (event == TaEvent::kReward) {
    // Deeper into the current action, saturating at the scale ends.
    v = include ? std::min(v + 1, 2 * n_states) : std::max(v - 1, 1);
  } else {
    // Toward the midpoint; crossing it flips the action next time around.
    v = include ? v - 1 : v + 1;
  }
  return static_cast<TaState>(v);
}

bool evaluate_clause(std::span<const TaState> ta_row, const BitVector& literals,
                     EvalMode mode, int n_states, OpCounters& ops) {
  ++ops.clause_evaluations;
  bool any_included = false;
  bool satisfied = true;
  for (std::size_t i = 0; i < ta_row.size(); ++i) {
    if (ta_row[i] > n_states) {
      any_included = true;
      if (!literals.get(i)) {
        satisfied = false;
        break;
      }
    }
  }
  if (!any_included) return mode == EvalMode::kTrain;
  return satisfied;
}

int class_sum(std::span<const TaState> class_states, int clauses_per_class,
              const BitVector& literals, EvalMode mode, int n_states, OpCounters& ops) {
  const std::size_t n_lits = literals.size();
  int sum = 0;
  for (int j = 0; j < clauses_per_class; ++j) {
    const auto row = class_states.subspan(static_cast<std::size_t>(j) * n_lits, n_lits);
    const bool out = evaluate_clause(row, literals, mode, n_states, ops);
    if (out) sum += (j % 2 == 0) ? 1 : -1;
  }
  return sum;
}

void type_i_feedback(std::span<TaState> ta_row, const BitVector& literals,
                     bool clause_output, double s, int n_states, Rng& rng,
                     OpCounters& ops) {
  const double p_high = (s - 1.0) / s;
  const double p_low = 1.0 / s;
  for (std::size_t i = 0; i < ta_row.size(); ++i) {
    const bool lit = literals.get(i);
    const double u = rng.uniform01();  // exactly one draw per literal
    const bool reinforce = clause_output && lit;
    if (u >= (reinforce ? p_high : p_low)) continue;
    const bool include = ta_row[i] > n_states;
    TaEvent event;
    if (reinforce) {
      event = include ? TaEvent::kReward : TaEvent::kPenalty;
    } else {
      event = include ? TaEvent::kPenalty : TaEvent::kReward;
    }
    ta_row[i] = ta_transition(ta_row[i], n_states, event, ops);
  }
}

void type_ii_feedback(std::span<TaState> ta_row, const BitVector& literals,
                      bool clause_output, int n_states, OpCounters& ops) {
  if (!clause_output) return;
  for (std::size_t i = 0; i < ta_row.size(); ++i) {
    if (!literals.get(i) && ta_row[i] <= n_states) {
      ta_row[i] = ta_transition(ta_row[i], n_states, TaEvent::kPenalty, ops);
    }
  }
}

TsetlinMachine::TsetlinMachine(int n_classes, std::size_t n_features, const TmParams& params)
    : n_classes_(n_classes), n_features_(n_features), params_(params) {
  params_.validate();
  if (n_classes < 1) throw ConfigError("need at least one class");
  if (n_features == 0) throw ConfigError("need at least one Boolean feature");
  n_literals_ = 2 * n_features_;
  words_per_clause_ = (n_literals_ + BitVector::kWordBits - 1) / BitVector::kWordBits;
  const std::size_t n_clauses =
      static_cast<std::size_t>(n_classes_) * static_cast<std::size_t>(params_.clauses_per_class);
  // Every automaton starts at N: just on the exclude side, one penalty away
  // from including its literal.
  states_.assign(n_clauses * n_literals_, static_cast<TaState>(params_.n_states));
  masks_.assign(n_clauses * words_per_clause_, 0);
  include_counts_.assign(n_clauses, 0);
}

std::span<const TaState> TsetlinMachine::clause_row(int cls, int clause) const {
  return {states_.data() + flat_index(cls, clause) * n_literals_, n_literals_};
}

void TsetlinMachine::set_ta_states(const std::vector<TaState>& states) {
  if (states.size() != states_.size()) {
    throw DimensionError("state vector has wrong length");
  }
  for (TaState v : states) {
    if (v < 1 || v > 2 * params_.n_states) {
      throw ParseError("TA state outside [1, 2N]");
    }
  }
  states_ = states;
  for (std::size_t flat = 0; flat < include_counts_.size(); ++flat) {
    rebuild_clause_mask(flat);
  }
}

void TsetlinMachine::set_ta_state(int cls, int clause, std::size_t literal, TaState value) {
  if (value < 1 || value > 2 * params_.n_states) throw ParseError("TA state outside [1, 2N]");
  const std::size_t flat = flat_index(cls, clause);
  states_[flat * n_literals_ + literal] = value;
  rebuild_clause_mask(flat);
}

void TsetlinMachine::rebuild_clause_mask(std::size_t flat) {
  std::uint64_t* mask = masks_.data() + flat * words_per_clause_;
  std::fill(mask, mask + words_per_clause_, 0);
  const TaState* row = states_.data() + flat * n_literals_;
  std::uint32_t count = 0;
  for (std::size_t i = 0; i < n_literals_; ++i) {
    if (row[i] > params_.n_states) {
      mask[i / BitVector::kWordBits] |= std::uint64_t{1} << (i % BitVector::kWordBits);
      ++count;
    }
  }
  include_counts_[flat] = count;
}

bool TsetlinMachine::clause_fires(std::size_t flat, const BitVector& literals,
                                  EvalMode mode) const {
  ++ops_.clause_evaluations;
  if (include_counts_[flat] == 0) return mode == EvalMode::kTrain;
  // The clause fails exactly when some included literal is 0. Literal words
  // keep their padding bits at zero, and the mask has no bits there, so the
  // word scan needs no tail handling.
  const std::uint64_t* mask = masks_.data() + flat * words_per_clause_;
  const auto words = literals.words();
  for (std::size_t w = 0; w < words_per_clause_; ++w) {
    if (mask[w] & ~words[w]) return false;
  }
  return true;
}

int TsetlinMachine::class_sum_fast(int cls, const BitVector& literals, EvalMode mode,
                                   std::vector<std::uint8_t>* outputs) const {
  int sum = 0;
  for (int j = 0; j < params_.clauses_per_class; ++j) {
    const bool out = clause_fires(flat_index(cls, j), literals, mode);
    if (outputs) (*outputs)[static_cast<std::size_t>(j)] = out ? 1 : 0;
    if (out) sum += (j % 2 == 0) ? 1 : -1;
  }
  return sum;
}

std::vector<int> TsetlinMachine::class_sums(const BitVector& features, EvalMode mode) const {
  if (features.size() != n_features_) {
    throw DimensionError("sample has " + std::to_string(features.size()) +
                         " Booleans, model expects " + std::to_string(n_features_));
  }
  const BitVector literals = make_literals(features);
  std::vector<int> sums(static_cast<std::size_t>(n_classes_), 0);
  for (int c = 0; c < n_classes_; ++c) {
    sums[static_cast<std::size_t>(c)] = class_sum_fast(c, literals, mode, nullptr);
  }
  return sums;
}

int TsetlinMachine::predict(const BitVector& features) const {
  const auto sums = class_sums(features, EvalMode::kInfer);
  int best = 0;
  for (int c = 1; c < n_classes_; ++c) {
    if (sums[static_cast<std::size_t>(c)] > sums[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

void TsetlinMachine::update(const BitVector& features, int target, Rng& rng) {
  if (features.size() != n_features_) {
    throw DimensionError("sample width does not match model");
  }
  if (target < 0 || target >= n_classes_) {
    throw ConfigError("target class out of range");
  }
  const BitVector literals = make_literals(features);
  const int m = params_.clauses_per_class;
  const int big_t = params_.threshold;

  // Clause outputs are snapshotted before any feedback so every decision in
  // this step sees the machine as it stood when the sample arrived.
  std::vector<std::uint8_t> target_out(static_cast<std::size_t>(m));
  const int raw_t = class_sum_fast(target, literals, EvalMode::kTrain, &target_out);
  const int v_t = std::clamp(raw_t, -big_t, big_t);

  // Draw order is part of the reproducibility contract: target clause
  // selections first, then the negative class pick, then its clause
  // selections, and only then the per-literal feedback draws.
  std::vector<std::uint8_t> target_sel(static_cast<std::size_t>(m));
  const double p_target = (big_t - v_t) / (2.0 * big_t);
  for (int j = 0; j < m; ++j) {
    target_sel[static_cast<std::size_t>(j)] = rng.uniform01() < p_target ? 1 : 0;
  }

  int negative = -1;
  std::vector<std::uint8_t> negative_out;
  std::vector<std::uint8_t> negative_sel;
  if (n_classes_ > 1) {
    const auto pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_classes_ - 1)));
    negative = pick >= target ? pick + 1 : pick;
    negative_out.resize(static_cast<std::size_t>(m));
    const int raw_n = class_sum_fast(negative, literals, EvalMode::kTrain, &negative_out);
    const int v_n = std::clamp(raw_n, -big_t, big_t);
    negative_sel.resize(static_cast<std::size_t>(m));
    const double p_negative = (big_t + v_n) / (2.0 * big_t);
    for (int j = 0; j < m; ++j) {
      negative_sel[static_cast<std::size_t>(j)] = rng.uniform01() < p_negative ? 1 : 0;
    }
  }

  // Target class: positive clauses learn the sample, negative clauses are
  // pushed to reject it.
  for (int j = 0; j < m; ++j) {
    if (!target_sel[static_cast<std::size_t>(j)]) continue;
    ++ops_.feedback_events;
    const std::size_t flat = flat_index(target, j);
    std::span<TaState> row{states_.data() + flat * n_literals_, n_literals_};
    const bool out = target_out[static_cast<std::size_t>(j)] != 0;
    if (j % 2 == 0) {
      type_i_feedback(row, literals, out, params_.s, params_.n_states, rng, ops_);
    } else {
      type_ii_feedback(row, literals, out, params_.n_states, ops_);
    }
    rebuild_clause_mask(flat);
  }

  // Sampled negative class: mirrored roles.
  if (negative >= 0) {
    for (int j = 0; j < m; ++j) {
      if (!negative_sel[static_cast<std::size_t>(j)]) continue;
      ++ops_.feedback_events;
      const std::size_t flat = flat_index(negative, j);
      std::span<TaState> row{states_.data() + flat * n_literals_, n_literals_};
      const bool out = negative_out[static_cast<std::size_t>(j)] != 0;
      if (j % 2 == 0) {
        type_ii_feedback(row, literals, out, params_.n_states, ops_);
      } else {
        type_i_feedback(row, literals, out, params_.s, params_.n_states, rng, ops_);
      }
      rebuild_clause_mask(flat);
    }
  }
}

double TsetlinMachine::accuracy(const EncodedDataset& data) const {
  if (data.samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    if (predict(data.samples[i]) == data.labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.samples.size());
}

void TsetlinMachine::fit(const EncodedDataset& train, const EncodedDataset* test,
                         const EncodedDataset* val, int epochs, Rng& rng,
                         const std::function<void(const EpochStats&)>& on_epoch) {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    rng.shuffle(order);
    for (const std::size_t idx : order) {
      update(train.samples[idx], train.labels[idx], rng);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_acc = accuracy(train);
    stats.test_acc = test ? accuracy(*test) : std::numeric_limits<double>::quiet_NaN();
    stats.val_acc = val ? accuracy(*val) : std::numeric_limits<double>::quiet_NaN();
    stats.ops = ops_;
    if (on_epoch) on_epoch(stats);
  }
}

}  // namespace kws
