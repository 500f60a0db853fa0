#pragma once

#include <string>

#include <json.hpp>

#include "camf/autograd.hpp"
#include "camf/model.hpp"

namespace camf {

// A trained model on disk: "<stem>.json" holds the manifest (config, tensor
// name -> shape and byte offset, vocabulary path and fingerprint) and
// "<stem>.bin" the tensors as little-endian float32 in manifest order.
struct Checkpoint {
    ModelConfig config;
    ParamStore params;
    std::string vocab_path;
    std::string vocab_fingerprint;
    // Free-form provenance (seed, epoch, dev scores).
    nlohmann::json info = nlohmann::json::object();
};

// `path` names the manifest; the payload goes next to it with a ".bin"
// extension. Both files are written atomically.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Throws DataError for a missing or inconsistent pair of files and
// InvalidConfig when the tensors do not fit the stored config.
Checkpoint load_checkpoint(const std::string& path);

// Rounds every value through float32, which is what a save/load cycle does.
ParamStore round_to_f32(const ParamStore& params);

}  // namespace camf
