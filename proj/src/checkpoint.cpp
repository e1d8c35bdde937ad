#include "drnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace drnn {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(bytes, 4);
}

void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(bytes, 8);
}

void read_exact(std::istream& is, char* out, std::size_t n, const char* what) {
  is.read(out, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char bytes[4];
  read_exact(is, reinterpret_cast<char*>(bytes), 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return v;
}

std::string shape_token(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return "scalar";
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::vector<std::size_t> parse_shape(const std::string& token) {
  std::vector<std::size_t> shape;
  if (token == "scalar") return shape;
  std::size_t start = 0;
  while (start <= token.size()) {
    const std::size_t end = token.find('x', start);
    const std::string part = token.substr(start, end == std::string::npos ? end : end - start);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw CheckpointError("bad array shape '" + token + "'");
    }
    shape.push_back(std::stoull(part));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return shape;
}

}  // namespace

void Checkpoint::set(std::string key, std::string value) {
  for (auto& [k, v] : header) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  header.emplace_back(std::move(key), std::move(value));
}

const std::string& Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  throw CheckpointError("checkpoint header lacks '" + key + "'");
}

bool Checkpoint::has(const std::string& key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return true;
  }
  return false;
}

const Tensor& Checkpoint::array(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint lacks array '" + name + "'");
}

void Checkpoint::add_array(std::string name, Tensor value) {
  arrays.emplace_back(std::move(name), std::move(value));
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  std::ostringstream header;
  for (const auto& [k, v] : ckpt.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw CheckpointError("header entry '" + k + "' contains a reserved character");
    }
    header << k << '=' << v << '\n';
  }
  for (const auto& [name, t] : ckpt.arrays) {
    header << "array=" << name << ' ' << shape_token(t.shape()) << '\n';
  }
  const std::string text = header.str();
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    for (double v : t.values()) put_f64(os, v);
  }
  if (!os) throw CheckpointError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  read_exact(is, magic, 8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("not a DRNNCKPT file");
  const std::uint32_t version = get_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(is, "header length");
  std::string text(header_len, '\0');
  read_exact(is, text.data(), header_len, "header");

  Checkpoint ckpt;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed header line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "array") {
      const std::size_t sp = value.rfind(' ');
      if (sp == std::string::npos) throw CheckpointError("malformed array line '" + line + "'");
      layout.emplace_back(value.substr(0, sp), parse_shape(value.substr(sp + 1)));
    } else {
      ckpt.header.emplace_back(std::move(key), std::move(value));
    }
  }
  for (auto& [name, shape] : layout) {
    Tensor t(shape);
    for (double& v : t.values()) {
      unsigned char bytes[8];
      read_exact(is, reinterpret_cast<char*>(bytes), 8, "array data");
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
      v = std::bit_cast<double>(bits);
    }
    ckpt.arrays.emplace_back(name, std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("trailing bytes after checkpoint arrays");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is);
}

void append_cell(Checkpoint& ckpt, const std::string& prefix, const CellParameters& p) {
  ckpt.set(prefix + "kind", std::string(to_string(p.kind)));
  ckpt.set(prefix + "activation", std::string(to_string(p.activation)));
  ckpt.set(prefix + "alpha_param", std::string(to_string(p.alpha_param)));
  ckpt.set(prefix + "hidden_size", std::to_string(p.hidden_size));
  ckpt.set(prefix + "input_size", std::to_string(p.input_size));
  const auto names = p.learnable_names();
  const auto tensors = p.learnable();
  for (std::size_t i = 0; i < names.size(); ++i) ckpt.add_array(prefix + names[i], *tensors[i]);
  if (!p.dale_signs.empty()) ckpt.add_array(prefix + "dale_signs", Tensor::vector(p.dale_signs));
}

CellParameters extract_cell(const Checkpoint& ckpt, const std::string& prefix) {
  CellParameters p;
  try {
    p.kind = parse_cell_kind(ckpt.get(prefix + "kind"));
    p.activation = parse_activation(ckpt.get(prefix + "activation"));
    p.alpha_param = parse_alpha_param(ckpt.get(prefix + "alpha_param"));
    p.hidden_size = std::stoull(ckpt.get(prefix + "hidden_size"));
    p.input_size = std::stoull(ckpt.get(prefix + "input_size"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("bad cell header: ") + e.what());
  }
  if (has_recurrent_matrix(p.kind)) p.W = ckpt.array(prefix + "W");
  p.U = ckpt.array(prefix + "U");
  p.b = ckpt.array(prefix + "b");
  if (has_decay(p.kind)) p.alpha_logit = ckpt.array(prefix + "alpha_logit");
  if (has_dale_signs(p.kind)) {
    const Tensor& s = ckpt.array(prefix + "dale_signs");
    p.dale_signs.assign(s.values().begin(), s.values().end());
  }
  try {
    p.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("inconsistent cell in checkpoint: ") + e.what());
  }
  return p;
}

}  // namespace drnn
