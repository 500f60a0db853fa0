#include "camf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>

#include "camf/error.hpp"
#include "camf/io.hpp"

namespace camf {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

std::string payload_path(const std::string& manifest) {
    fs::path p(manifest);
    p.replace_extension(".bin");
    return p.string();
}

void put_f32(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double get_f32(const std::string& in, std::size_t offset) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + b])) << (8 * b);
    }
    return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

ParamStore round_to_f32(const ParamStore& params) {
    ParamStore out = params;
    for (auto& [name, t] : out) {
        for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
    }
    return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    check_params(ckpt.params, ckpt.config);
    std::string payload;
    nlohmann::json tensors = nlohmann::json::array();
    // manifest order is the canonical creation order
    for (const auto& name : parameter_names(ckpt.config)) {
        const Tensor& t = ckpt.params.at(name);
        if (!t.all_finite()) throw InvalidInput("non-finite values in tensor " + name);
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
        for (double v : t.data()) put_f32(payload, v);
    }
    nlohmann::json manifest = {
        {"format", "camf-checkpoint"},
        {"version", kFormatVersion},
        {"dtype", "float32-le"},
        {"payload", fs::path(payload_path(path)).filename().string()},
        {"payload_bytes", payload.size()},
        {"config", ckpt.config.to_json()},
        {"vocab_path", ckpt.vocab_path},
        {"vocab_fingerprint", ckpt.vocab_fingerprint},
        {"tensors", tensors},
        {"info", ckpt.info},
    };
    write_file_atomic(payload_path(path), payload);
    write_file_atomic(path, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint manifest " + path + " is not valid JSON: " + e.what());
    }
    Checkpoint ckpt;
    try {
        if (manifest.value("format", "") != "camf-checkpoint") {
            throw DataError(path + " is not a checkpoint manifest");
        }
        ckpt.config = ModelConfig::from_json(manifest.at("config"));
        ckpt.vocab_path = manifest.value("vocab_path", "");
        ckpt.vocab_fingerprint = manifest.value("vocab_fingerprint", "");
        ckpt.info = manifest.value("info", nlohmann::json::object());
        const fs::path bin = fs::path(path).parent_path() / manifest.at("payload").get<std::string>();
        const std::string payload = read_file(bin.string());
        if (payload.size() != manifest.at("payload_bytes").get<std::size_t>()) {
            throw DataError("payload " + bin.string() + " has " + std::to_string(payload.size()) +
                            " bytes, manifest says " + manifest.at("payload_bytes").dump());
        }
        for (const auto& t : manifest.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            const auto shape = t.at("shape").get<Shape>();
            const auto offset = t.at("offset").get<std::size_t>();
            Tensor value(shape);
            if (offset + 4 * value.size() > payload.size()) {
                throw DataError("tensor " + name + " runs past the end of the payload");
            }
            for (std::size_t i = 0; i < value.size(); ++i) value[i] = get_f32(payload, offset + 4 * i);
            ckpt.params.emplace(name, std::move(value));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint manifest " + path + ": " + e.what());
    } catch (const InvalidShape& e) {
        throw DataError("malformed checkpoint manifest " + path + ": " + e.what());
    }
    check_params(ckpt.params, ckpt.config);
    return ckpt;
}

}  // namespace camf
