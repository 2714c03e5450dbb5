#include "svqa/dataset.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>

#include <json.hpp>

namespace svqa {

using nlohmann::json;

namespace {

std::vector<uint8_t> pack_frames(const char magic[4], int a, int h, int w,
                                 const std::vector<float>& payload) {
    std::vector<uint8_t> out;
    out.reserve(24 + payload.size() * 4);
    out.insert(out.end(), magic, magic + 4);
    put_u32(out, 1u);
    put_u32(out, static_cast<uint32_t>(a));
    put_u32(out, static_cast<uint32_t>(h));
    put_u32(out, static_cast<uint32_t>(w));
    std::vector<uint8_t> body;
    body.reserve(payload.size() * 4);
    for (float v : payload) put_f32(body, v);
    put_u32(out, crc32(body.data(), body.size()));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

// Shared header/CRC validation for both containers. channels tells how many
// floats per pixel the payload holds.
std::vector<float> unpack_frames(const std::string& path, const char magic[4], int channels,
                                 int& a, int& h, int& w) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 24) throw IoError("truncated header in " + path);
    if (std::memcmp(bytes.data(), magic, 4) != 0)
        throw IoError("bad magic in " + path + " (expected " + std::string(magic, 4) + ")");
    const uint32_t version = get_u32(bytes.data() + 4);
    if (version != 1)
        throw IoError("unsupported version " + std::to_string(version) + " in " + path);
    a = static_cast<int>(get_u32(bytes.data() + 8));
    h = static_cast<int>(get_u32(bytes.data() + 12));
    w = static_cast<int>(get_u32(bytes.data() + 16));
    const uint32_t want_crc = get_u32(bytes.data() + 20);
    if (a <= 0 || h <= 0 || w <= 0) throw IoError("bad dimensions in " + path);
    const size_t count = static_cast<size_t>(a) * h * w * channels;
    if (bytes.size() != 24 + count * 4)
        throw IoError("payload size mismatch in " + path + " (have " +
                      std::to_string(bytes.size() - 24) + " bytes, header implies " +
                      std::to_string(count * 4) + ")");
    const uint32_t got_crc = crc32(bytes.data() + 24, count * 4);
    if (got_crc != want_crc)
        throw IoError("checksum failure in " + path + " (payload corrupted)");
    std::vector<float> payload(count);
    for (size_t i = 0; i < count; ++i) payload[i] = get_f32(bytes.data() + 24 + i * 4);
    return payload;
}

}  // namespace

void save_clip(const std::string& path, const Clip& clip) {
    if (clip.pixels.size() != static_cast<size_t>(clip.F) * clip.H * clip.W * 3)
        throw ContractError("clip pixel buffer does not match dimensions");
    for (float v : clip.pixels)
        if (!(v >= 0.0f && v <= 1.0f))
            throw ContractError("clip pixels must lie in [0,1]");
    write_file_bytes(path, pack_frames("CLIP", clip.F, clip.H, clip.W, clip.pixels));
}

Clip load_clip(const std::string& path) {
    Clip clip;
    clip.pixels = unpack_frames(path, "CLIP", 3, clip.F, clip.H, clip.W);
    for (float v : clip.pixels)
        if (!(v >= 0.0f && v <= 1.0f))
            throw IoError("clip payload outside [0,1] in " + path);
    return clip;
}

void save_flow(const std::string& path, const FlowStack& flow) {
    if (flow.vectors.size() != static_cast<size_t>(flow.N) * flow.H * flow.W * 2)
        throw ContractError("flow buffer does not match dimensions");
    write_file_bytes(path, pack_frames("FLOW", flow.N, flow.H, flow.W, flow.vectors));
}

FlowStack load_flow(const std::string& path) {
    FlowStack flow;
    flow.vectors = unpack_frames(path, "FLOW", 2, flow.N, flow.H, flow.W);
    return flow;
}

std::string export_dataset(const std::vector<DatasetItem>& items, const std::string& dir) {
    std::filesystem::create_directories(dir);
    json manifest = json::array();
    for (size_t i = 0; i < items.size(); ++i) {
        char clip_name[32], truth_name[32];
        std::snprintf(clip_name, sizeof clip_name, "clip_%04zu.clip", i);
        std::snprintf(truth_name, sizeof truth_name, "truth_%04zu.json", i);
        save_clip((std::filesystem::path(dir) / clip_name).string(), items[i].clip);
        write_file_text((std::filesystem::path(dir) / truth_name).string(),
                        graph_to_json(items[i].truth));
        manifest.push_back(
            {{"clip", clip_name}, {"truth", truth_name}, {"seed", items[i].seed}});
    }
    const std::string manifest_path = (std::filesystem::path(dir) / "manifest.json").string();
    write_file_text(manifest_path, manifest.dump(2) + "\n");
    return manifest_path;
}

std::vector<DatasetItem> import_dataset(const std::string& dir) {
    const std::string manifest_path = (std::filesystem::path(dir) / "manifest.json").string();
    json manifest;
    try {
        manifest = json::parse(read_file_text(manifest_path));
    } catch (const json::exception& e) {
        throw IoError(std::string("manifest parse failure: ") + e.what());
    }
    if (!manifest.is_array()) throw IoError("manifest must be a JSON array");
    std::vector<DatasetItem> items;
    for (const auto& entry : manifest) {
        DatasetItem item;
        try {
            item.seed = entry.at("seed").get<uint64_t>();
            item.clip =
                load_clip((std::filesystem::path(dir) / entry.at("clip").get<std::string>())
                              .string());
            item.truth = graph_from_json(read_file_text(
                (std::filesystem::path(dir) / entry.at("truth").get<std::string>()).string()));
        } catch (const json::exception& e) {
            throw IoError(std::string("manifest entry missing field: ") + e.what());
        }
        if (item.truth.F != item.clip.F)
            throw IoError("clip and truth disagree on frame count in " + dir);
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace svqa
