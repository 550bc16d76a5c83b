#pragma once

// Checkpoint container: magic "BKPK", version byte 0x01, a UTF-8 header of
// key=value lines (config, bookkeeping, then the vocabulary one escaped
// token per line) terminated by a blank line, followed by binary tensor
// records [name len: u32 LE][name][rank: u32][dims: u32 each][dtype byte:
// 0=f64, 1=f32][raw little-endian data]. 64-bit storage round-trips
// bitwise; 32-bit storage is within one float ULP.

#include <bit>
#include <cstring>
#include <fstream>

#include "training.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace backpack {

namespace detail {

inline std::string escape_token(const std::string& t) {
  std::string out;
  for (char c : t) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else if (c == '\r') out += "\\r";
    else out += c;
  }
  return out;
}

inline std::string unescape_token(const std::string& t) {
  std::string out;
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] == '\\' && i + 1 < t.size()) {
      char n = t[++i];
      if (n == 'n') out += '\n';
      else if (n == 'r') out += '\r';
      else out += n;
    } else {
      out += t[i];
    }
  }
  return out;
}

inline void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError("checkpoint: truncated u32");
  return v;
}

}  // namespace detail

struct Checkpoint {
  BackpackConfig config;
  Vocabulary vocab = Vocabulary::from_tokens({Vocabulary::kUnkToken, Vocabulary::kBosToken},
                                             TokenizerMode::Word);
  long step = 0;
  uint64_t rng_state = 0;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;  // params then optimizer
  bool has_optimizer = false;
  long opt_step = 0;

  const std::vector<double>& tensor(const std::string& name) const {
    for (const auto& [n, v] : tensors)
      if (n == name) return v;
    throw DataError("checkpoint: missing tensor " + name);
  }
};

inline void save_checkpoint(const std::string& path, const BackpackModel& model,
                            const Vocabulary& vocab, long step = 0, uint64_t rng_state = 0,
                            const OptimizerState* opt = nullptr, bool f32 = false) {
  const BackpackConfig& c = model.config();
  if (c.vocab_size != vocab.size())
    throw DimensionError("save_checkpoint: model and vocabulary disagree on |V|");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_checkpoint: cannot open " + path);
  os.write("BKPK", 4);
  os.put(0x01);
  auto line = [&os](const std::string& k, const std::string& v) { os << k << '=' << v << '\n'; };
  line("model_dim", std::to_string(c.model_dim));
  line("num_senses", std::to_string(c.num_senses));
  line("layers", std::to_string(c.layers));
  line("heads", std::to_string(c.heads));
  line("seq_len", std::to_string(c.seq_len));
  line("ff_mult", std::to_string(c.ff_mult));
  line("faithful_sense_ff", c.faithful_sense_ff ? "1" : "0");
  line("vocab_size", std::to_string(c.vocab_size));
  line("tokenizer", to_string(vocab.mode()));
  line("step", std::to_string(step));
  line("rng_state", std::to_string(rng_state));
  line("dtype", f32 ? "f32" : "f64");
  line("has_optimizer", opt ? "1" : "0");
  if (opt) line("opt_step", std::to_string(opt->step));
  for (const std::string& t : vocab.tokens()) os << "tok=" << detail::escape_token(t) << '\n';
  os << '\n';

  auto record = [&os, f32](const std::string& name, const std::vector<int>& shape,
                           const std::vector<double>& data) {
    detail::put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<uint32_t>(shape.size()));
    for (int d : shape) detail::put_u32(os, static_cast<uint32_t>(d));
    os.put(f32 ? 1 : 0);
    if (f32) {
      std::vector<float> f(data.begin(), data.end());
      os.write(reinterpret_cast<const char*>(f.data()),
               static_cast<std::streamsize>(f.size() * sizeof(float)));
    } else {
      os.write(reinterpret_cast<const char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
  };

  const auto& params = model.parameters();
  for (const auto& [name, t] : params) record(name, t.shape(), t.data());
  if (opt) {
    if (opt->m.size() != params.size() || opt->v.size() != params.size())
      throw DimensionError("save_checkpoint: optimizer state does not mirror parameters");
    for (size_t i = 0; i < params.size(); ++i) {
      record("opt.m." + params[i].first, params[i].second.shape(), opt->m[i]);
      record("opt.v." + params[i].first, params[i].second.shape(), opt->v[i]);
    }
  }
  if (!os) throw DataError("save_checkpoint: write failure on " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "BKPK", 4) != 0)
    throw DataError("load_checkpoint: magic mismatch, not a checkpoint file");
  int version = is.get();
  if (version != 0x01)
    throw DataError("load_checkpoint: unsupported version " + std::to_string(version) +
                    ", expected 1");

  Checkpoint ck;
  std::map<std::string, std::string> header;
  std::vector<std::string> toks;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) break;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("load_checkpoint: malformed header line: " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "tok") {
      toks.push_back(detail::unescape_token(val));
    } else {
      header[key] = val;
    }
  }
  auto need = [&header](const std::string& k) {
    auto it = header.find(k);
    if (it == header.end()) throw DataError("load_checkpoint: header missing " + k);
    return it->second;
  };
  BackpackConfig& c = ck.config;
  c.model_dim = std::stoi(need("model_dim"));
  c.num_senses = std::stoi(need("num_senses"));
  c.layers = std::stoi(need("layers"));
  c.heads = std::stoi(need("heads"));
  c.seq_len = std::stoi(need("seq_len"));
  c.ff_mult = std::stoi(need("ff_mult"));
  c.faithful_sense_ff = need("faithful_sense_ff") == "1";
  c.vocab_size = std::stoi(need("vocab_size"));
  ck.step = std::stol(need("step"));
  ck.rng_state = std::stoull(need("rng_state"));
  ck.has_optimizer = need("has_optimizer") == "1";
  if (ck.has_optimizer) ck.opt_step = std::stol(need("opt_step"));
  bool f32 = need("dtype") == "f32";
  if (need("dtype") != "f32" && need("dtype") != "f64")
    throw DataError("load_checkpoint: unknown dtype " + need("dtype"));
  if (static_cast<int>(toks.size()) != c.vocab_size)
    throw DataError("load_checkpoint: vocabulary size disagrees with header");
  ck.vocab = Vocabulary::from_tokens(std::move(toks), tokenizer_mode_from(need("tokenizer")));
  c.validate();

  auto expected = BackpackModel::parameter_shapes(c);
  size_t want = expected.size() + (ck.has_optimizer ? 2 * expected.size() : 0);
  size_t param_i = 0, opt_i = 0;
  while (ck.tensors.size() < want) {
    uint32_t name_len = detail::get_u32(is);
    if (name_len == 0 || name_len > 4096) throw DataError("load_checkpoint: implausible name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw DataError("load_checkpoint: truncated name");
    uint32_t rank = detail::get_u32(is);
    if (rank > 8) throw DataError("load_checkpoint: implausible rank");
    std::vector<int> shape(rank);
    size_t count = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(detail::get_u32(is));
      count *= static_cast<size_t>(shape[d]);
    }
    int dtype = is.get();
    if (dtype != 0 && dtype != 1) throw DataError("load_checkpoint: bad dtype byte");
    if ((dtype == 1) != f32) throw DataError("load_checkpoint: dtype byte disagrees with header");

    // verify name and shape against the declared order
    const std::pair<std::string, std::vector<int>>* exp = nullptr;
    if (param_i < expected.size()) {
      exp = &expected[param_i];
      if (name != exp->first)
        throw DataError("load_checkpoint: unexpected tensor '" + name + "', wanted '" +
                        exp->first + "'");
      ++param_i;
    } else {
      size_t which = opt_i / 2;
      std::string wanted = (opt_i % 2 == 0 ? "opt.m." : "opt.v.") + expected[which].first;
      if (name != wanted)
        throw DataError("load_checkpoint: unexpected tensor '" + name + "', wanted '" + wanted + "'");
      exp = &expected[which];
      ++opt_i;
    }
    if (shape != exp->second) throw DataError("load_checkpoint: shape mismatch for " + name);

    std::vector<double> data(count);
    if (dtype == 1) {
      std::vector<float> f(count);
      if (!is.read(reinterpret_cast<char*>(f.data()),
                   static_cast<std::streamsize>(count * sizeof(float))))
        throw DataError("load_checkpoint: truncated data for " + name);
      std::copy(f.begin(), f.end(), data.begin());
    } else {
      if (!is.read(reinterpret_cast<char*>(data.data()),
                   static_cast<std::streamsize>(count * sizeof(double))))
        throw DataError("load_checkpoint: truncated data for " + name);
    }
    ck.tensors.emplace_back(std::move(name), std::move(data));
  }
  if (is.peek() != std::ifstream::traits_type::eof())
    throw DataError("load_checkpoint: trailing bytes after final tensor");
  return ck;
}

// Rebuilds a runnable model (and optionally optimizer state) from a loaded
// checkpoint.
inline BackpackModel model_from_checkpoint(const Checkpoint& ck) {
  BackpackModel m(ck.config, 0);
  const auto& params = m.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& src = ck.tensors[i];
    if (src.first != params[i].first || src.second.size() != params[i].second.size())
      throw DataError("model_from_checkpoint: tensor layout mismatch at " + src.first);
    Tensor t = params[i].second;  // shared handle; data is mutable through it
    t.data() = src.second;
  }
  return m;
}

inline OptimizerState optimizer_from_checkpoint(const Checkpoint& ck) {
  if (!ck.has_optimizer) throw DataError("optimizer_from_checkpoint: checkpoint has no optimizer");
  auto expected = BackpackModel::parameter_shapes(ck.config);
  OptimizerState st;
  st.step = ck.opt_step;
  for (size_t i = 0; i < expected.size(); ++i) {
    st.m.push_back(ck.tensors[expected.size() + 2 * i].second);
    st.v.push_back(ck.tensors[expected.size() + 2 * i + 1].second);
  }
  return st;
}

}  // namespace backpack
