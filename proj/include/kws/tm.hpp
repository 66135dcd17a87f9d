#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "kws/bitvec.hpp"
#include "kws/rng.hpp"

namespace kws {

// A Tsetlin automaton's state is a value in [1, 2N]. Values 1..N mean the
// automaton excludes its literal from the clause, values N+1..2N mean it
// includes it. Rewards push the value deeper into its current half,
// penalties push it toward (and eventually across) the midpoint.
using TaState = std::uint16_t;

enum class TaEvent { kReward, kPenalty };

// Clause semantics differ between phases only for the empty clause: a
// clause with no included literals outputs 1 during training (so feedback
// can bootstrap it) and 0 during inference (so it casts no vote).
enum class EvalMode { kTrain, kInfer };

// Deterministic work counters. Inference cost is dominated by clause
// evaluations and training cost by automaton updates, so these serve as a
// machine-independent energy proxy.
struct OpCounters {
  std::uint64_t clause_evaluations = 0;
  std::uint64_t ta_updates = 0;
  std::uint64_t feedback_events = 0;
};

struct TmParams {
  int clauses_per_class = 450;  // m, must be even: clauses alternate polarity
  int threshold = 23;           // T, clamps class sums during training
  double s = 3.9;               // specificity, controls Type I probabilities
  int n_states = 100;           // N, states per action per automaton

  void validate() const;
};

// Doubles an F-bit feature vector into 2F literals: positions 0..F-1 hold
// the features, positions F..2F-1 their negations.
BitVector make_literals(const BitVector& features);

// Applies one reward or penalty to a single automaton and returns the new
// state. Rewards saturate at the ends of the scale; penalties move toward
// the midpoint and flip the action once they cross it.
TaState ta_transition(TaState value, int n_states, TaEvent event, OpCounters& ops);

// Conjunction over the literals whose automata currently include them.
bool evaluate_clause(std::span<const TaState> ta_row, const BitVector& literals,
                     EvalMode mode, int n_states, OpCounters& ops);

// Sum of clause outputs with alternating polarity: even-indexed clauses
// vote +1, odd-indexed clauses vote -1. class_states holds the
// clauses_per_class rows of one class back to back.
int class_sum(std::span<const TaState> class_states, int clauses_per_class,
              const BitVector& literals, EvalMode mode, int n_states, OpCounters& ops);

// Type I feedback reinforces a clause toward matching the current sample.
// One uniform draw is consumed per literal position, in literal order:
// where the clause fired and the literal is 1, include is rewarded and
// exclude penalized with probability (s-1)/s; everywhere else include is
// penalized and exclude rewarded with probability 1/s.
void type_i_feedback(std::span<TaState> ta_row, const BitVector& literals,
                     bool clause_output, double s, int n_states, Rng& rng,
                     OpCounters& ops);

// Type II feedback fights false positives: when the clause fired, every
// zero literal whose automaton currently excludes it is penalized (pushed
// toward inclusion, which will make the clause reject this sample).
// Consumes no randomness. A clause that did not fire is left untouched.
void type_ii_feedback(std::span<TaState> ta_row, const BitVector& literals,
                      bool clause_output, int n_states, OpCounters& ops);

struct EncodedDataset {
  std::size_t n_bits = 0;
  std::vector<BitVector> samples;
  std::vector<int> labels;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_acc = 0.0;
  double test_acc = 0.0;
  double val_acc = 0.0;
  OpCounters ops;
};

// One team of clauses per class over a shared Boolean feature space.
// All randomness flows through the Rng handed to update()/fit(); inference
// is pure apart from the work counters.
class TsetlinMachine {
 public:
  TsetlinMachine(int n_classes, std::size_t n_features, const TmParams& params);

  int n_classes() const { return n_classes_; }
  std::size_t n_features() const { return n_features_; }
  const TmParams& params() const { return params_; }

  std::span<const TaState> ta_states() const { return states_; }
  std::span<const TaState> clause_row(int cls, int clause) const;

  // Replaces all automaton states (values must lie in [1, 2N]).
  void set_ta_states(const std::vector<TaState>& states);
  void set_ta_state(int cls, int clause, std::size_t literal, TaState value);

  // Per-class vote totals for one sample.
  std::vector<int> class_sums(const BitVector& features, EvalMode mode) const;

  // Highest class sum wins; ties break to the lowest class index.
  int predict(const BitVector& features) const;

  // One stochastic training step against a single labeled sample.
  void update(const BitVector& features, int target, Rng& rng);

  // Percent of samples predicted correctly.
  double accuracy(const EncodedDataset& data) const;

  // Runs `epochs` passes over train, shuffling sample order each epoch from
  // the shared Rng, and reports accuracies after every epoch. test/val may
  // be null, in which case their accuracies are reported as NaN.
  void fit(const EncodedDataset& train, const EncodedDataset* test,
           const EncodedDataset* val, int epochs, Rng& rng,
           const std::function<void(const EpochStats&)>& on_epoch = {});

  const OpCounters& ops() const { return ops_; }
  void reset_ops() { ops_ = OpCounters{}; }

 private:
  std::size_t flat_index(int cls, int clause) const {
    return (static_cast<std::size_t>(cls) * static_cast<std::size_t>(params_.clauses_per_class) +
            static_cast<std::size_t>(clause));
  }
  void rebuild_clause_mask(std::size_t flat);
  bool clause_fires(std::size_t flat, const BitVector& literals, EvalMode mode) const;
  int class_sum_fast(int cls, const BitVector& literals, EvalMode mode,
                     std::vector<std::uint8_t>* outputs) const;

  int n_classes_ = 0;
  std::size_t n_features_ = 0;  // F; clauses see 2F literals
  TmParams params_;

  std::size_t n_literals_ = 0;
  std::size_t words_per_clause_ = 0;
  std::vector<TaState> states_;          // [class][clause][literal]
  std::vector<std::uint64_t> masks_;     // include bitmask per clause
  std::vector<std::uint32_t> include_counts_;
  mutable OpCounters ops_;
};

}  // namespace kws
