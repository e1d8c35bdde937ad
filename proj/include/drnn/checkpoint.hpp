#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drnn/cells.hpp"
#include "drnn/tensor.hpp"

namespace drnn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'R', 'N', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container:
///
///   "DRNNCKPT" | u32 version | u32 header_len | header (UTF-8) | arrays
///
/// The header is `key=value` lines; each array is announced by an
/// `array=<name> <d0>x<d1>...` line (`array=<name> scalar` for rank 0) and the
/// arrays follow the header in the same order as little-endian IEEE-754
/// doubles. All integers are little-endian.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<std::pair<std::string, Tensor>> arrays;

  void set(std::string key, std::string value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;
  const Tensor& array(const std::string& name) const;
  void add_array(std::string name, Tensor value);
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends one cell's description and arrays under `prefix` (e.g. "layer0.").
/// `dale_signs` is stored as an array so a shuffled inhibitory placement
/// survives the round trip.
void append_cell(Checkpoint& ckpt, const std::string& prefix, const CellParameters& p);
CellParameters extract_cell(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace drnn
