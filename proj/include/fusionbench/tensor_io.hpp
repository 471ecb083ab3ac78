#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fusionbench/errors.hpp"

namespace fusionbench {

// ---------------------------------------------------------------------------
// Raw tensor container: 8-byte magic, u32 rank, u32 dims[rank], u8 element
// code, then the little-endian payload. Video frames live in these files.

inline constexpr char kTensorMagic[8] = {'F', 'B', 'T', 'E', 'N', 'S', '0', '1'};

enum class ElementType : std::uint8_t { F32 = 1, F64 = 2, U8 = 3 };

struct RawTensor {
    std::vector<std::uint32_t> dims;
    ElementType dtype = ElementType::F32;
    std::vector<float> f32;
    std::vector<double> f64;
    std::vector<std::uint8_t> u8;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::uint32_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

template <typename T>
void put_scalar_le(std::ostream& out, T v) {
    static_assert(sizeof(T) <= 8);
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(T));
    unsigned char buf[8];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), static_cast<std::streamsize>(sizeof(T)));
}

template <typename T>
T get_scalar_le(std::istream& in) {
    unsigned char buf[8] = {};
    in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(sizeof(T)));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
}

}  // namespace detail

inline void write_raw_tensor(const std::string& path, const RawTensor& tensor) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open tensor file for writing: " + path);
    out.write(kTensorMagic, 8);
    detail::put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
    for (std::uint32_t d : tensor.dims) detail::put_u32(out, d);
    out.put(static_cast<char>(tensor.dtype));
    switch (tensor.dtype) {
        case ElementType::F32:
            for (float v : tensor.f32) detail::put_scalar_le(out, v);
            break;
        case ElementType::F64:
            for (double v : tensor.f64) detail::put_scalar_le(out, v);
            break;
        case ElementType::U8:
            out.write(reinterpret_cast<const char*>(tensor.u8.data()),
                      static_cast<std::streamsize>(tensor.u8.size()));
            break;
    }
    if (!out) throw ConfigError("short write on tensor file: " + path);
}

inline RawTensor read_raw_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open tensor file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kTensorMagic, 8) != 0)
        throw ConfigError("bad tensor magic in " + path);
    RawTensor tensor;
    const std::uint32_t rank = detail::get_u32(in);
    if (rank > 8) throw ConfigError("unreasonable tensor rank in " + path);
    tensor.dims.resize(rank);
    for (std::uint32_t& d : tensor.dims) d = detail::get_u32(in);
    const int code = in.get();
    if (code != static_cast<int>(ElementType::F32) && code != static_cast<int>(ElementType::F64) &&
        code != static_cast<int>(ElementType::U8))
        throw ConfigError("unknown element type in " + path);
    tensor.dtype = static_cast<ElementType>(code);
    const std::size_t n = tensor.element_count();
    switch (tensor.dtype) {
        case ElementType::F32:
            tensor.f32.resize(n);
            for (float& v : tensor.f32) v = detail::get_scalar_le<float>(in);
            break;
        case ElementType::F64:
            tensor.f64.resize(n);
            for (double& v : tensor.f64) v = detail::get_scalar_le<double>(in);
            break;
        case ElementType::U8:
            tensor.u8.resize(n);
            in.read(reinterpret_cast<char*>(tensor.u8.data()), static_cast<std::streamsize>(n));
            break;
    }
    if (!in) throw ConfigError("truncated tensor payload in " + path);
    return tensor;
}

// ---------------------------------------------------------------------------
// Minimal CSV: numeric tables with one header row. Quoting is not needed for
// the formats the artifact reads and writes.

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open csv for writing: " + path);
    for (std::size_t j = 0; j < table.header.size(); ++j) {
        if (j) out << ',';
        out << table.header[j];
    }
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out << ',';
            out << format_double(row[j]);
        }
        out << '\n';
    }
    if (!out) throw ConfigError("short write on csv: " + path);
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open csv: " + path);
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty csv: " + path);
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) table.header.push_back(cell);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream fields(line);
        while (std::getline(fields, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError(path + ":" + std::to_string(line_no) +
                                  ": cannot parse number '" + cell + "'");
            }
        }
        if (row.size() != table.header.size())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(table.header.size()) + " fields, got " +
                              std::to_string(row.size()));
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace fusionbench
