#pragma once

#include "erq/common.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace erq {

enum class DType { Float32, Int32, UInt8 };

std::string to_string(DType dtype);

// A dense row-major tensor as stored on disk (.npy v1.0, little-endian).
struct TensorFile {
    std::vector<std::size_t> shape;
    std::variant<std::vector<float>, std::vector<std::int32_t>, std::vector<std::uint8_t>> data;

    DType dtype() const;
    std::size_t size() const;

    static TensorFile from_matrix(const Matrix& m);
    static TensorFile from_codes(const CodeMatrix& m);
    static TensorFile from_vector(const Vector& v);

    // Widens float32/int32/uint8 data of a 2-D tensor to double.
    Matrix to_matrix() const;
    CodeMatrix to_codes() const;

    bool operator==(const TensorFile&) const = default;
};

// Raised for malformed tensor files; offset is the byte position of the problem.
class FormatError : public ValidationError {
public:
    FormatError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

std::vector<std::uint8_t> encode_npy(const TensorFile& t);
TensorFile decode_npy(const std::vector<std::uint8_t>& bytes);

TensorFile read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const TensorFile& t);

enum class ActQuant { Uniform, LogSqrt2 };

std::string to_string(ActQuant q);
ActQuant parse_act_quant(const std::string& name);

struct LayerManifestEntry {
    std::string layer_id;
    std::filesystem::path weight_path;
    std::filesystem::path calib_path;
    ActQuant act_quant = ActQuant::Uniform;
    int bits_w = 4;
    int bits_a = 4;
};

// Parses and validates a manifest. Relative tensor paths resolve against the
// manifest's directory. Every referenced tensor is opened and cross-checked.
std::vector<LayerManifestEntry> load_manifest(const std::filesystem::path& path);

// Parses entries and resolves paths without opening any tensor.
std::vector<LayerManifestEntry> parse_manifest(const std::filesystem::path& path);

// Shape/domain checks shared by load_manifest and callers holding tensors in memory.
void validate_layer(const LayerManifestEntry& entry, const TensorFile& weight, const TensorFile& calib);

}  // namespace erq
