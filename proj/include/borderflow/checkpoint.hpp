#pragma once

// Binary checkpoint container.
//
//   bytes 0..15   magic "BORDERFLOW-CKPT1"
//   bytes 16..23  manifest length L, uint64 little-endian
//   next L bytes  manifest, UTF-8 JSON:
//                   {"meta": {key: string, ...},
//                    "tensors": [{"name", "shape", "offset"}, ...]}
//   remainder     payload, float64 little-endian; offsets are byte offsets
//                 into the payload
//
// Tensors are written in name order, so equal contents give equal files.

#include <filesystem>
#include <map>
#include <string>

#include "borderflow/array.hpp"
#include "borderflow/optim.hpp"
#include "borderflow/params.hpp"

namespace borderflow {

inline constexpr char kCheckpointMagic[] = "BORDERFLOW-CKPT1";

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Array> tensors;

  void put_params(const std::string& prefix, const ParameterSet& params);
  // Every parameter in `params` must be present with a matching shape.
  void get_params(const std::string& prefix, ParameterSet& params) const;
  void put_optimizer(const std::string& prefix, const OptimizerState& state);
  void get_optimizer(const std::string& prefix, OptimizerState& state) const;
  const std::string& meta_at(const std::string& key) const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace borderflow
