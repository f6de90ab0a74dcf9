#include "suesr/tensor_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "suesr/errors.hpp"
#include "suesr/tensor.hpp"

namespace suesr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "weights.bin is written in host byte order");

}  // namespace

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fnv1a_hex(const std::string& bytes) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(bytes);
    return os.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_tensor_store(const fs::path& dir, const ParameterSet& params) {
    fs::create_directories(dir);
    std::string blob;
    blob.reserve(params.total_count() * sizeof(float));
    json index = json::array();
    for (const auto& a : params) {
        index.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", blob.size()}});
        for (double v : a.values) {
            const float f = static_cast<float>(v);
            char raw[sizeof(float)];
            std::memcpy(raw, &f, sizeof(float));
            blob.append(raw, sizeof(float));
        }
    }
    write_file_atomic(dir / "weights.bin", blob);
    write_file_atomic(dir / "index.json", index.dump(1) + "\n");
}

ParameterSet read_tensor_store(const fs::path& dir) {
    const fs::path weights_path = dir / "weights.bin";
    const fs::path index_path = dir / "index.json";
    if (!fs::exists(weights_path) || !fs::exists(index_path)) {
        throw IntegrityError("tensor store '" + dir.string() + "' is missing weights.bin or index.json");
    }
    json index;
    try {
        index = json::parse(read_file(index_path));
    } catch (const json::exception& e) {
        throw IntegrityError("index.json in '" + dir.string() + "' is not valid JSON: " + e.what());
    }
    if (!index.is_array()) throw IntegrityError("index.json must be an array");
    const std::string blob = read_file(weights_path);

    ParameterSet params;
    std::size_t expected_offset = 0;
    for (const auto& record : index) {
        std::string name;
        std::vector<int> shape;
        std::size_t offset = 0;
        try {
            name = record.at("name").get<std::string>();
            shape = record.at("shape").get<std::vector<int>>();
            offset = record.at("offset").get<std::size_t>();
        } catch (const json::exception& e) {
            throw IntegrityError("malformed index record: " + std::string(e.what()));
        }
        if (offset != expected_offset) {
            throw IntegrityError("index offset mismatch for '" + name + "': expected " +
                                 std::to_string(expected_offset) + ", found " + std::to_string(offset));
        }
        expected_offset += element_count(shape) * sizeof(float);
        if (expected_offset > blob.size()) {
            throw IntegrityError("weights.bin is truncated: '" + name + "' needs bytes up to " +
                                 std::to_string(expected_offset) + " but file has " + std::to_string(blob.size()));
        }
        params.add(name, shape);
    }
    if (expected_offset != blob.size()) {
        throw IntegrityError("weights.bin has " + std::to_string(blob.size()) + " bytes, index describes " +
                             std::to_string(expected_offset));
    }
    std::size_t offset = 0;
    for (auto& a : params) {
        for (double& v : a.values) {
            float f = 0.0f;
            std::memcpy(&f, blob.data() + offset, sizeof(float));
            v = static_cast<double>(f);
            offset += sizeof(float);
        }
    }
    return params;
}

}  // namespace suesr
