#include "somn/config.hpp"

#include <sstream>

namespace somn {

void ModelConfig::validate() const {
  if (B < 1 || n < 1 || m < 1) throw ConfigError("B, n, m must all be >= 1");
  if (d_in < 1 || d_model < 1 || d_out < 1) throw ConfigError("dims must be positive");
  if (heads < 1 || d_model % heads != 0)
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  if (head_dim() % 2 != 0) throw ConfigError("head dim must be even for rotary positions");
  if (B % m != 0) throw ConfigError("B must be a multiple of m (encoder pooling stride)");
  if (vocab_size < 7) throw ConfigError("vocab_size must hold content tokens plus 4 specials");
  if (enc_layers < 1 || llm_layers < 1 || syn_layers < 1) throw ConfigError("layer counts must be >= 1");
}

std::string ModelConfig::fingerprint() const {
  nlohmann::json j = *this;
  const std::string s = j.dump();
  std::ostringstream os;
  os << std::hex << fnv1a(s.data(), s.size());
  return os.str();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_in", c.d_in},           {"d_model", c.d_model},
                     {"d_out", c.d_out},         {"B", c.B},
                     {"n", c.n},                 {"m", c.m},
                     {"vocab_size", c.vocab_size}, {"enc_layers", c.enc_layers},
                     {"llm_layers", c.llm_layers}, {"syn_layers", c.syn_layers},
                     {"heads", c.heads}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.d_in = j.value("d_in", c.d_in);
  c.d_model = j.value("d_model", c.d_model);
  c.d_out = j.value("d_out", c.d_out);
  c.B = j.value("B", c.B);
  c.n = j.value("n", c.n);
  c.m = j.value("m", c.m);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.llm_layers = j.value("llm_layers", c.llm_layers);
  c.syn_layers = j.value("syn_layers", c.syn_layers);
  c.heads = j.value("heads", c.heads);
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace somn
