#include "kws/model_io.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "kws/error.hpp"

namespace kws {

namespace {

constexpr int kFormatVersion = 1;
constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.append("==");
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ParseError("base64 payload length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        // Padding may only appear in the last two positions of the payload.
        if (i + 4 != text.size() || k < 2) throw ParseError("misplaced base64 padding");
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw ParseError("base64 data after padding");
        vals[k] = b64_value(c);
        if (vals[k] < 0) throw ParseError("invalid base64 character");
      }
    }
    const std::uint32_t v = (static_cast<std::uint32_t>(vals[0]) << 18) |
                            (static_cast<std::uint32_t>(vals[1]) << 12) |
                            (static_cast<std::uint32_t>(vals[2]) << 6) |
                            static_cast<std::uint32_t>(vals[3]);
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xff));
  }
  return out;
}

}  // namespace

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  const TmParams& p = model.machine.params();
  if (2 * p.n_states > 256) {
    throw ConfigError("model file stores one byte per automaton; 2N must be <= 256");
  }
  const auto states = model.machine.ta_states();
  std::vector<unsigned char> bytes(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(states[i] - 1);
  }

  const nlohmann::json doc = {
      {"format_version", kFormatVersion},
      {"keywords", model.keywords},
      {"hyperparams",
       {{"s", p.s}, {"T", p.threshold}, {"N", p.n_states}, {"m", p.clauses_per_class}}},
      {"feature_meta",
       {{"F", model.machine.n_features()},
        {"n_bins", model.encoder.n_bins()},
        {"boundaries", model.encoder.boundaries()}}},
      {"ta_states", base64_encode(bytes)},
  };
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path.string());
  out << doc.dump(2) << '\n';
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad model file " + path.string() + ": " + e.what());
  }

  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw ModelVersionError("model format version " + std::to_string(version) +
                              " is not supported (this build reads version " +
                              std::to_string(kFormatVersion) + ")");
    }

    auto keywords = doc.at("keywords").get<std::vector<std::string>>();
    const auto& hp = doc.at("hyperparams");
    TmParams params;
    params.s = hp.at("s").get<double>();
    params.threshold = hp.at("T").get<int>();
    params.n_states = hp.at("N").get<int>();
    params.clauses_per_class = hp.at("m").get<int>();

    const auto& meta = doc.at("feature_meta");
    auto encoder = QuantileEncoder::from_parts(
        meta.at("n_bins").get<int>(),
        meta.at("boundaries").get<std::vector<std::vector<double>>>());
    const auto n_bool = meta.at("F").get<std::size_t>();
    if (n_bool != encoder.total_booleans()) {
      throw ParseError("model feature count disagrees with its boundaries: " + path.string());
    }

    TsetlinMachine machine(static_cast<int>(keywords.size()), n_bool, params);
    const auto bytes = base64_decode(doc.at("ta_states").get<std::string>());
    if (bytes.size() != machine.ta_states().size()) {
      throw ParseError("model file holds " + std::to_string(bytes.size()) +
                       " automaton states, expected " +
                       std::to_string(machine.ta_states().size()));
    }
    std::vector<TaState> states(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      states[i] = static_cast<TaState>(bytes[i] + 1);
    }
    machine.set_ta_states(states);

    return TrainedModel{std::move(keywords), std::move(encoder), std::move(machine)};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad model file " + path.string() + ": " + e.what());
  }
}

}  // namespace kws
