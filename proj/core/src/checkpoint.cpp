/**
 * @file checkpoint.cpp
 */
#include "lagcast/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lagcast/errors.hpp"

namespace lagcast {

namespace {

constexpr char kMagic[8] = {'L', 'N', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(sizeof(float) == 4, "float32 payloads assume 4-byte float");

void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Payloads are written through byte copies; on the (universal today) little-endian
// IEEE-754 targets this is the identity transform.
void write_f32_payload(std::ostream& os, const TensorF& t) {
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
}

TensorF read_f32_payload(std::istream& is, const Shape& s) {
    TensorF t(s);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
    if (!is) throw IoError("checkpoint: truncated payload");
    return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    if (data.has_optimizer && (data.adam_m.size() != data.params.size() || data.adam_v.size() != data.params.size()))
        throw ValidationError("checkpoint: optimizer moments must align with parameters");

    nlohmann::json manifest;
    manifest["model"] = data.model_kind;
    manifest["config"] = nlohmann::json::parse(data.config_json);
    manifest["optimizer"] = {{"present", data.has_optimizer}, {"step", data.optimizer_step}};
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, t] : data.params) {
        const Shape& s = t.shape();
        params.push_back({{"name", name}, {"shape", {s.b, s.c, s.h, s.w}}});
    }
    manifest["params"] = std::move(params);
    const std::string blob = manifest.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 8);
    write_u32_le(os, static_cast<std::uint32_t>(blob.size()));
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    for (const auto& [name, t] : data.params) write_f32_payload(os, t);
    if (data.has_optimizer) {
        for (const auto& t : data.adam_m) write_f32_payload(os, t);
        for (const auto& t : data.adam_v) write_f32_payload(os, t);
    }
    os.flush();
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("checkpoint: bad magic (expected LNCKPT01): " + path);
    const std::uint32_t len = read_u32_le(is);
    std::string blob(len, '\0');
    is.read(blob.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("checkpoint: truncated manifest: " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(blob);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: manifest is not valid JSON: " + std::string(e.what()));
    }

    CheckpointData data;
    try {
        data.model_kind = manifest.at("model").get<std::string>();
        data.config_json = manifest.at("config").dump();
        data.has_optimizer = manifest.at("optimizer").at("present").get<bool>();
        data.optimizer_step = manifest.at("optimizer").at("step").get<std::int64_t>();
        for (const auto& p : manifest.at("params")) {
            const auto& sh = p.at("shape");
            if (sh.size() != 4) throw IoError("checkpoint: parameter shape must have 4 dims");
            Shape s{sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>(), sh[3].get<int>()};
            data.params.emplace_back(p.at("name").get<std::string>(), read_f32_payload(is, s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: malformed manifest: " + std::string(e.what()));
    }
    if (data.has_optimizer) {
        for (const auto& [name, t] : data.params) data.adam_m.push_back(read_f32_payload(is, t.shape()));
        for (const auto& [name, t] : data.params) data.adam_v.push_back(read_f32_payload(is, t.shape()));
    }
    return data;
}

}  // namespace lagcast
