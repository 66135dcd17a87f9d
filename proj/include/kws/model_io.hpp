#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kws/booleanize.hpp"
#include "kws/tm.hpp"

namespace kws {

// Everything needed to score audio later: the keyword list (class order),
// the fitted encoder, and the trained clause automata.
struct TrainedModel {
  std::vector<std::string> keywords;
  QuantileEncoder encoder;
  TsetlinMachine machine;
};

// JSON envelope with the automaton states packed as base64 over one byte
// per automaton (state value minus one). Requires 2N <= 256.
void save_model(const TrainedModel& model, const std::filesystem::path& path);

// Rejects unknown format versions with ModelVersionError and structural
// damage (bad JSON, bad base64, wrong state count) with ParseError.
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace kws
