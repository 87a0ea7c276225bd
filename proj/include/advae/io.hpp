#pragma once

// WAV (PCM16 mono 16 kHz) and per-frame label file I/O.

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>

#include "advae/dsp.hpp"

namespace advae::io {

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
    const std::array<char, 4> b{char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    os.write(b.data(), 4);
}
inline void put_u16(std::ostream& os, std::uint16_t v) {
    const std::array<char, 2> b{char(v & 0xff), char((v >> 8) & 0xff)};
    os.write(b.data(), 2);
}
inline std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t get_u16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }
}  // namespace detail

constexpr int kWavSampleRate = 16000;

/// Samples are scaled by 2^15 and rounded; +1.0 saturates to 32767.
inline void wav_write(const dsp::Utterance& u, const std::filesystem::path& path) {
    if (u.sample_rate != kWavSampleRate) fail("wav_write: unsupported sample rate ", u.sample_rate);
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("wav_write: cannot open '", path.string(), "' for writing");
    const auto data_bytes = static_cast<std::uint32_t>(u.size() * 2);
    os.write("RIFF", 4);
    detail::put_u32(os, 36 + data_bytes);
    os.write("WAVEfmt ", 8);
    detail::put_u32(os, 16);
    detail::put_u16(os, 1);  // PCM
    detail::put_u16(os, 1);  // mono
    detail::put_u32(os, kWavSampleRate);
    detail::put_u32(os, kWavSampleRate * 2);
    detail::put_u16(os, 2);
    detail::put_u16(os, 16);
    os.write("data", 4);
    detail::put_u32(os, data_bytes);
    for (double s : u.samples) {
        if (!std::isfinite(s)) fail("wav_write: non-finite sample");
        const double q = std::clamp(std::nearbyint(s * 32768.0), -32768.0, 32767.0);
        detail::put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
    if (!os) fail("wav_write: write failed for '", path.string(), "'");
}

inline dsp::Utterance wav_read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("wav_read: cannot open '", path.string(), "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const std::string where = "wav_read('" + path.string() + "'): ";
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        fail(where, "malformed header (not a RIFF/WAVE file)");

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const unsigned char* chunk = buf.data() + pos;
        const std::uint32_t size = detail::get_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (body + size > buf.size()) fail(where, "malformed header (chunk overruns file)");
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16) fail(where, "malformed header (short fmt chunk)");
            format = detail::get_u16(buf.data() + body);
            channels = detail::get_u16(buf.data() + body + 2);
            rate = detail::get_u32(buf.data() + body + 4);
            bits = detail::get_u16(buf.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) fail(where, "malformed header (data before fmt)");
            if (format != 1) fail(where, "unsupported encoding (format tag ", format, ", expected PCM)");
            if (bits != 16) fail(where, "unsupported encoding (", bits, " bits per sample, expected 16)");
            if (channels != 1) fail(where, "unsupported channel count ", channels);
            if (rate != kWavSampleRate) fail(where, "unsupported sample rate ", rate);
            dsp::Utterance u;
            u.sample_rate = kWavSampleRate;
            u.id = path.stem().string();
            u.samples.resize(size / 2);
            for (std::size_t i = 0; i < u.samples.size(); ++i)
                u.samples[i] = static_cast<std::int16_t>(detail::get_u16(buf.data() + body + 2 * i)) / 32768.0;
            return u;
        }
        pos = body + size + (size & 1u);
    }
    fail(where, "malformed header (no data chunk)");
}

/// One value per line: "0", "1" or a decimal in [0, 1].
inline void write_labels(const dsp::LabelSeq& labels, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) fail("write_labels: cannot open '", path.string(), "'");
    os << std::setprecision(17);
    for (double v : labels.values) {
        if (labels.kind == dsp::LabelKind::hard)
            os << (v >= 0.5 ? "1" : "0") << '\n';
        else
            os << v << '\n';
    }
}

inline dsp::LabelSeq read_labels(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail("read_labels: cannot open '", path.string(), "'");
    dsp::LabelSeq labels;
    labels.kind = dsp::LabelKind::hard;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(line, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != line.size() || !(v >= 0.0 && v <= 1.0))
            fail("read_labels: line ", lineno, " of '", path.string(), "' is not a value in [0, 1]: '", line, "'");
        if (v != 0.0 && v != 1.0) labels.kind = dsp::LabelKind::soft;
        labels.values.push_back(v);
    }
    return labels;
}

}  // namespace advae::io
