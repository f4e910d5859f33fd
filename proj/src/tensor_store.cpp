#include "erq/tensor_store.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <sstream>

namespace erq {

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kPreambleLen = kMagicLen + 2 + 2;  // magic, version, header length
constexpr std::size_t kAlign = 64;

std::size_t element_size(DType d) {
    switch (d) {
        case DType::Float32: return 4;
        case DType::Int32: return 4;
        case DType::UInt8: return 1;
    }
    return 0;
}

std::string descr(DType d) {
    switch (d) {
        case DType::Float32: return "<f4";
        case DType::Int32: return "<i4";
        case DType::UInt8: return "|u1";
    }
    return "";
}

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Minimal reader for the Python dict literal numpy writes into the header.
class HeaderParser {
public:
    HeaderParser(const std::string& text, std::size_t base) : text_(text), base_(base) {}

    void parse(std::string& descr_out, bool& fortran_out, std::vector<std::size_t>& shape_out) {
        bool have_descr = false, have_order = false, have_shape = false;
        skip_ws();
        expect('{');
        while (true) {
            skip_ws();
            if (peek() == '}') {
                ++pos_;
                break;
            }
            const std::string key = parse_string();
            skip_ws();
            expect(':');
            skip_ws();
            if (key == "descr") {
                descr_out = parse_string();
                have_descr = true;
            } else if (key == "fortran_order") {
                fortran_out = parse_bool();
                have_order = true;
            } else if (key == "shape") {
                shape_out = parse_shape();
                have_shape = true;
            } else {
                fail("unknown header key '" + key + "'");
            }
            skip_ws();
            if (peek() == ',') ++pos_;
        }
        if (!have_descr || !have_order || !have_shape) fail("header missing descr/fortran_order/shape");
    }

private:
    [[noreturn]] void fail(const std::string& msg) const { throw FormatError("npy header: " + msg, base_ + pos_); }

    char peek() const {
        if (pos_ >= text_.size()) fail("unexpected end of header");
        return text_[pos_];
    }
    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }
    void skip_ws() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
    }
    std::string parse_string() {
        const char quote = peek();
        if (quote != '\'' && quote != '"') fail("expected quoted string");
        ++pos_;
        const auto end = text_.find(quote, pos_);
        if (end == std::string::npos) fail("unterminated string");
        std::string out = text_.substr(pos_, end - pos_);
        pos_ = end + 1;
        return out;
    }
    bool parse_bool() {
        if (text_.compare(pos_, 4, "True") == 0) {
            pos_ += 4;
            return true;
        }
        if (text_.compare(pos_, 5, "False") == 0) {
            pos_ += 5;
            return false;
        }
        fail("expected True or False");
    }
    std::vector<std::size_t> parse_shape() {
        std::vector<std::size_t> shape;
        expect('(');
        while (true) {
            skip_ws();
            if (peek() == ')') {
                ++pos_;
                return shape;
            }
            if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected dimension");
            std::size_t v = 0;
            while (std::isdigit(static_cast<unsigned char>(peek()))) {
                v = v * 10 + static_cast<std::size_t>(peek() - '0');
                ++pos_;
            }
            shape.push_back(v);
            skip_ws();
            if (peek() == ',') ++pos_;
        }
    }

    const std::string& text_;
    std::size_t base_;
    std::size_t pos_ = 0;
};

template <typename T>
std::vector<T> read_payload(const std::vector<std::uint8_t>& bytes, std::size_t offset, std::size_t count) {
    std::vector<T> out(count);
    if (count > 0) std::memcpy(out.data(), bytes.data() + offset, count * sizeof(T));
    return out;
}

}  // namespace

std::string to_string(DType dtype) {
    switch (dtype) {
        case DType::Float32: return "float32";
        case DType::Int32: return "int32";
        case DType::UInt8: return "uint8";
    }
    return "?";
}

FormatError::FormatError(const std::string& what, std::size_t offset)
    : ValidationError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

DType TensorFile::dtype() const {
    return std::visit(
        [](const auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            if constexpr (std::is_same_v<T, float>) return DType::Float32;
            else if constexpr (std::is_same_v<T, std::int32_t>) return DType::Int32;
            else return DType::UInt8;
        },
        data);
}

std::size_t TensorFile::size() const {
    return std::visit([](const auto& v) { return v.size(); }, data);
}

TensorFile TensorFile::from_matrix(const Matrix& m) {
    TensorFile t;
    t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    std::vector<float> buf(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    t.data = std::move(buf);
    return t;
}

TensorFile TensorFile::from_codes(const CodeMatrix& m) {
    TensorFile t;
    t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    t.data = std::vector<std::int32_t>(m.data(), m.data() + m.size());
    return t;
}

TensorFile TensorFile::from_vector(const Vector& v) {
    TensorFile t;
    t.shape = {static_cast<std::size_t>(v.size())};
    std::vector<float> buf(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    t.data = std::move(buf);
    return t;
}

Matrix TensorFile::to_matrix() const {
    if (shape.size() != 2) throw ValidationError("expected a 2-D tensor, got " + std::to_string(shape.size()) + "-D");
    Matrix m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
    std::visit(
        [&m](const auto& v) {
            for (std::size_t i = 0; i < v.size(); ++i) m.data()[i] = static_cast<double>(v[i]);
        },
        data);
    return m;
}

CodeMatrix TensorFile::to_codes() const {
    if (shape.size() != 2) throw ValidationError("expected a 2-D tensor");
    if (dtype() != DType::Int32) throw ValidationError("expected int32 codes, got " + to_string(dtype()));
    const auto& v = std::get<std::vector<std::int32_t>>(data);
    CodeMatrix m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

std::vector<std::uint8_t> encode_npy(const TensorFile& t) {
    if (product(t.shape) != t.size()) {
        throw ValidationError("tensor shape does not match element count (" + std::to_string(product(t.shape)) +
                              " vs " + std::to_string(t.size()) + ")");
    }
    std::ostringstream header;
    header << "{'descr': '" << descr(t.dtype()) << "', 'fortran_order': False, 'shape': (";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        header << t.shape[i];
        if (t.shape.size() == 1 || i + 1 < t.shape.size()) header << ",";
        if (i + 1 < t.shape.size()) header << " ";
    }
    header << "), }";
    std::string h = header.str();
    const std::size_t unpadded = kPreambleLen + h.size() + 1;
    h.append((kAlign - unpadded % kAlign) % kAlign, ' ');
    h.push_back('\n');

    std::vector<std::uint8_t> out;
    const std::size_t payload = t.size() * element_size(t.dtype());
    out.reserve(kPreambleLen + h.size() + payload);
    out.insert(out.end(), kMagic, kMagic + kMagicLen);
    out.push_back(1);
    out.push_back(0);
    const auto hlen = static_cast<std::uint16_t>(h.size());
    out.push_back(static_cast<std::uint8_t>(hlen & 0xff));
    out.push_back(static_cast<std::uint8_t>(hlen >> 8));
    out.insert(out.end(), h.begin(), h.end());
    std::visit(
        [&out](const auto& v) {
            const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
            out.insert(out.end(), p, p + v.size() * sizeof(v[0]));
        },
        t.data);
    return out;
}

TensorFile decode_npy(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kPreambleLen) throw FormatError("file shorter than npy preamble", bytes.size());
    if (std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) throw FormatError("bad npy magic string", 0);
    if (bytes[6] != 1 || bytes[7] != 0) {
        throw FormatError("unsupported npy version " + std::to_string(bytes[6]) + "." + std::to_string(bytes[7]), 6);
    }
    const std::size_t hlen = static_cast<std::size_t>(bytes[8]) | (static_cast<std::size_t>(bytes[9]) << 8);
    if (kPreambleLen + hlen > bytes.size()) throw FormatError("truncated npy header", bytes.size());
    const std::string header(bytes.begin() + kPreambleLen, bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleLen + hlen));

    std::string d;
    bool fortran = false;
    TensorFile t;
    HeaderParser(header, kPreambleLen).parse(d, fortran, t.shape);
    if (fortran) throw FormatError("fortran_order tensors are not supported", kPreambleLen);

    const std::size_t count = product(t.shape);
    const std::size_t offset = kPreambleLen + hlen;
    std::size_t esize = 0;
    if (d == "<f4") esize = 4;
    else if (d == "<i4") esize = 4;
    else if (d == "|u1" || d == "<u1") esize = 1;
    else throw FormatError("unsupported dtype '" + d + "'", kPreambleLen);

    const std::size_t need = count * esize;
    if (bytes.size() - offset < need) {
        throw FormatError("truncated payload: expected " + std::to_string(count) + " elements, found " +
                              std::to_string((bytes.size() - offset) / esize),
                          bytes.size());
    }
    if (bytes.size() - offset > need) throw FormatError("trailing bytes after payload", offset + need);

    if (d == "<f4") t.data = read_payload<float>(bytes, offset, count);
    else if (d == "<i4") t.data = read_payload<std::int32_t>(bytes, offset, count);
    else t.data = read_payload<std::uint8_t>(bytes, offset, count);
    return t;
}

TensorFile read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open tensor file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_npy(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

void write_tensor(const std::filesystem::path& path, const TensorFile& t) {
    const auto bytes = encode_npy(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
}

std::string to_string(ActQuant q) { return q == ActQuant::Uniform ? "uniform" : "log_sqrt2"; }

ActQuant parse_act_quant(const std::string& name) {
    if (name == "uniform") return ActQuant::Uniform;
    if (name == "log_sqrt2") return ActQuant::LogSqrt2;
    throw ValidationError("invalid quantizer name '" + name + "' (expected uniform or log_sqrt2)");
}

void validate_layer(const LayerManifestEntry& entry, const TensorFile& weight, const TensorFile& calib) {
    const std::string where = "layer '" + entry.layer_id + "': ";
    if (entry.bits_w < 2 || entry.bits_a < 2 || entry.bits_w > 30 || entry.bits_a > 30) {
        throw ValidationError(where + "bit-widths must lie in [2, 30]");
    }
    if (weight.shape.size() != 2) throw ValidationError(where + "weight tensor must be 2-D");
    if (calib.shape.size() != 2) throw ValidationError(where + "calibration tensor must be 2-D");
    if (weight.dtype() != DType::Float32 || calib.dtype() != DType::Float32) {
        throw ValidationError(where + "weight and calibration tensors must be float32");
    }
    if (weight.shape[1] != calib.shape[1]) {
        throw ValidationError(where + "D_in mismatch: weight has " + std::to_string(weight.shape[1]) +
                              " columns, calibration has " + std::to_string(calib.shape[1]));
    }
    if (entry.act_quant == ActQuant::LogSqrt2) {
        const auto& v = std::get<std::vector<float>>(calib.data);
        if (std::any_of(v.begin(), v.end(), [](float x) { return !(x >= 0.0f); })) {
            throw ValidationError(where + "log_sqrt2 activations require non-negative calibration values");
        }
    }
}

std::vector<LayerManifestEntry> parse_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + path.string() + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array()) {
        throw ValidationError("manifest must be an object with a 'layers' array");
    }
    const auto base = path.parent_path();
    std::vector<LayerManifestEntry> entries;
    for (const auto& item : doc["layers"]) {
        LayerManifestEntry e;
        try {
            e.layer_id = item.at("layer_id").get<std::string>();
            e.weight_path = item.at("weight_path").get<std::string>();
            e.calib_path = item.at("calib_path").get<std::string>();
            e.act_quant = parse_act_quant(item.value("act_quant", std::string("uniform")));
            e.bits_w = item.value("bits_w", 4);
            e.bits_a = item.value("bits_a", 4);
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError("manifest entry: " + std::string(ex.what()));
        }
        if (e.weight_path.is_relative()) e.weight_path = base / e.weight_path;
        if (e.calib_path.is_relative()) e.calib_path = base / e.calib_path;
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<LayerManifestEntry> load_manifest(const std::filesystem::path& path) {
    auto entries = parse_manifest(path);
    for (const auto& e : entries) validate_layer(e, read_tensor(e.weight_path), read_tensor(e.calib_path));
    return entries;
}

}  // namespace erq
