#pragma once

// Versioned binary container for network parameters.
//
// Byte layout (all integers little-endian, doubles IEEE-754 binary64 LE):
//
//   magic        8 bytes  "ADVAEPAR"
//   version      u32      kArchiveVersion
//   n_meta       u32
//   n_meta x     { str key, str value }              str = u32 length + bytes
//   n_nets       u32
//   n_nets x     { str name,
//                  u32 input_dim, u32 n_hidden,
//                  n_hidden x { u32 width, u8 activation },
//                  u32 output_dim, u8 output_activation,
//                  per layer l: u32 rows, u32 cols, f64[rows*cols] (row-major weights),
//                               u32 len, f64[len] (bias) }
//   trailer      8 bytes  "ADVAEEND"
//
// Activation codes: 0 identity, 1 sigmoid, 2 exp, 3 relu, 4 tanh.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "advae/nn.hpp"

namespace advae::nn {

inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr char kArchiveMagic[8] = {'A', 'D', 'V', 'A', 'E', 'P', 'A', 'R'};
inline constexpr char kArchiveTrailer[8] = {'A', 'D', 'V', 'A', 'E', 'E', 'N', 'D'};

struct NamedNetwork {
    std::string name;
    MlpSpec spec;
    MlpParams params;
};

struct Archive {
    std::map<std::string, std::string> meta;
    std::vector<NamedNetwork> networks;

    const NamedNetwork* find(std::string_view name) const {
        for (const auto& n : networks)
            if (n.name == name) return &n;
        return nullptr;
    }
    const NamedNetwork& at(std::string_view name) const {
        if (const auto* n = find(name)) return *n;
        fail("archive: missing network '", name, "'");
    }
    const std::string& meta_at(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) fail("archive: missing header field '", key, "'");
        return it->second;
    }
};

namespace detail {

class Writer {
public:
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double d) {
        const auto v = std::bit_cast<std::uint64_t>(d);
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string data) : buf_(std::move(data)) {}
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) fail("archive: truncated file (needed ", n, " bytes at offset ", pos_, ")");
    }
    void bytes(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    std::string buf_;
    std::size_t pos_ = 0;
};

inline Activation activation_from_code(std::uint8_t c) {
    if (c > 4) fail("archive: unknown activation code ", int(c));
    return static_cast<Activation>(c);
}

}  // namespace detail

inline std::string serialize(const Archive& a) {
    detail::Writer w;
    w.bytes(kArchiveMagic, 8);
    w.u32(kArchiveVersion);
    w.u32(static_cast<std::uint32_t>(a.meta.size()));
    for (const auto& [k, v] : a.meta) {
        w.str(k);
        w.str(v);
    }
    w.u32(static_cast<std::uint32_t>(a.networks.size()));
    for (const auto& net : a.networks) {
        check_shapes(net.spec, net.params, net.name);
        w.str(net.name);
        w.u32(static_cast<std::uint32_t>(net.spec.input_dim));
        w.u32(static_cast<std::uint32_t>(net.spec.hidden.size()));
        for (const auto& h : net.spec.hidden) {
            w.u32(static_cast<std::uint32_t>(h.width));
            w.u8(static_cast<std::uint8_t>(h.activation));
        }
        w.u32(static_cast<std::uint32_t>(net.spec.output_dim));
        w.u8(static_cast<std::uint8_t>(net.spec.output_activation));
        for (std::size_t l = 0; l < net.spec.num_layers(); ++l) {
            const Matrix& W = net.params.weights[l];
            w.u32(static_cast<std::uint32_t>(W.rows()));
            w.u32(static_cast<std::uint32_t>(W.cols()));
            for (Eigen::Index r = 0; r < W.rows(); ++r)
                for (Eigen::Index c = 0; c < W.cols(); ++c) w.f64(W(r, c));
            const Vector& b = net.params.biases[l];
            w.u32(static_cast<std::uint32_t>(b.size()));
            for (Eigen::Index i = 0; i < b.size(); ++i) w.f64(b[i]);
        }
    }
    w.bytes(kArchiveTrailer, 8);
    return w.data();
}

inline Archive deserialize(std::string data) {
    detail::Reader r(std::move(data));
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kArchiveMagic, 8) != 0) fail("archive: bad magic (not a parameter file)");
    const std::uint32_t version = r.u32();
    if (version != kArchiveVersion) fail("archive: unsupported format version ", version, " (expected ", kArchiveVersion, ")");
    Archive a;
    const std::uint32_t n_meta = r.u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str();
        a.meta[k] = r.str();
    }
    const std::uint32_t n_nets = r.u32();
    for (std::uint32_t i = 0; i < n_nets; ++i) {
        NamedNetwork net;
        net.name = r.str();
        net.spec.input_dim = static_cast<int>(r.u32());
        const std::uint32_t n_hidden = r.u32();
        if (n_hidden > 1024) fail("archive: implausible hidden layer count ", n_hidden);
        for (std::uint32_t h = 0; h < n_hidden; ++h) {
            Layer layer;
            layer.width = static_cast<int>(r.u32());
            layer.activation = detail::activation_from_code(r.u8());
            net.spec.hidden.push_back(layer);
        }
        net.spec.output_dim = static_cast<int>(r.u32());
        net.spec.output_activation = detail::activation_from_code(r.u8());
        net.spec.validate();
        for (std::size_t l = 0; l < net.spec.num_layers(); ++l) {
            const std::uint32_t rows = r.u32(), cols = r.u32();
            if (static_cast<int>(rows) != net.spec.layer_out(l) || static_cast<int>(cols) != net.spec.layer_in(l))
                fail("archive: shape mismatch in '", net.name, "' layer ", l, ": stored ", rows, "x", cols, ", spec ",
                     net.spec.layer_out(l), "x", net.spec.layer_in(l));
            r.need(std::size_t(rows) * cols * 8);
            Matrix W(rows, cols);
            for (Eigen::Index rr = 0; rr < W.rows(); ++rr)
                for (Eigen::Index c = 0; c < W.cols(); ++c) W(rr, c) = r.f64();
            const std::uint32_t len = r.u32();
            if (len != rows) fail("archive: bias length mismatch in '", net.name, "' layer ", l);
            r.need(std::size_t(len) * 8);
            Vector b(len);
            for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = r.f64();
            net.params.weights.push_back(std::move(W));
            net.params.biases.push_back(std::move(b));
        }
        net.params.touch();
        a.networks.push_back(std::move(net));
    }
    char trailer[8];
    r.bytes(trailer, 8);
    if (std::memcmp(trailer, kArchiveTrailer, 8) != 0 || !r.at_end()) fail("archive: corrupt trailer");
    return a;
}

inline void save_archive(const Archive& a, const std::filesystem::path& path) {
    const std::string bytes = serialize(a);
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("archive: cannot open '", path.string(), "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) fail("archive: write failed for '", path.string(), "'");
}

inline Archive load_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("archive: cannot open '", path.string(), "'");
    std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize(std::move(data));
}

/// Exact text form of a double for header fields.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace advae::nn
