#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "advae/io.hpp"

using namespace advae;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path d = fs::temp_directory_path() / ("advae_io_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
}

void write_raw_wav(const fs::path& p, std::uint16_t format, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits) {
    std::ofstream os(p, std::ios::binary);
    auto u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto u16 = [&](std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };
    const std::uint32_t data = 400;
    os.write("RIFF", 4);
    u32(36 + data);
    os.write("WAVEfmt ", 8);
    u32(16);
    u16(format);
    u16(channels);
    u32(rate);
    u32(rate * channels * bits / 8);
    u16(static_cast<std::uint16_t>(channels * bits / 8));
    u16(bits);
    os.write("data", 4);
    u32(data);
    for (std::uint32_t i = 0; i < data; ++i) os.put(0);
}

std::string error_of(const fs::path& p) {
    try {
        io::wav_read(p);
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Wav, RampRoundTripWithinQuantizationBound) {
    dsp::Utterance u;
    for (int i = 0; i <= 20000; ++i) u.samples.push_back(-1.0 + 2.0 * i / 20000.0);
    const auto p = temp_dir() / "ramp.wav";
    io::wav_write(u, p);
    const auto r = io::wav_read(p);
    ASSERT_EQ(r.size(), u.size());
    EXPECT_EQ(r.sample_rate, 16000);
    double worst = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) worst = std::max(worst, std::abs(r.samples[i] - u.samples[i]));
    EXPECT_LE(worst, std::pow(2.0, -15));
}

TEST(Wav, RejectsStereo) {
    const auto p = temp_dir() / "stereo.wav";
    write_raw_wav(p, 1, 2, 16000, 16);
    EXPECT_NE(error_of(p).find("unsupported channel count"), std::string::npos) << error_of(p);
}

TEST(Wav, RejectsOtherSampleRates) {
    const auto p = temp_dir() / "cd.wav";
    write_raw_wav(p, 1, 1, 44100, 16);
    EXPECT_NE(error_of(p).find("unsupported sample rate"), std::string::npos) << error_of(p);
}

TEST(Wav, RejectsFloatAndMalformed) {
    const auto p = temp_dir() / "float.wav";
    write_raw_wav(p, 3, 1, 16000, 32);
    EXPECT_NE(error_of(p).find("unsupported encoding"), std::string::npos);

    const auto q = temp_dir() / "junk.wav";
    std::ofstream(q) << "definitely not a wav file";
    EXPECT_NE(error_of(q).find("malformed header"), std::string::npos);
}

TEST(Labels, FileRoundTripAndSoftDetection) {
    dsp::LabelSeq hard{{0, 1, 1, 0, 1}, dsp::LabelKind::hard};
    const auto p = temp_dir() / "hard.txt";
    io::write_labels(hard, p);
    const auto r = io::read_labels(p);
    EXPECT_EQ(r.values, hard.values);
    EXPECT_EQ(r.kind, dsp::LabelKind::hard);

    dsp::LabelSeq soft{{0.0, 0.25, 0.9999, 1.0}, dsp::LabelKind::soft};
    io::write_labels(soft, p);
    const auto s = io::read_labels(p);
    EXPECT_EQ(s.values, soft.values);
    EXPECT_EQ(s.kind, dsp::LabelKind::soft);
}

TEST(Labels, RejectsOutOfRange) {
    const auto p = temp_dir() / "bad.txt";
    std::ofstream(p) << "0\n1\n1.5\n";
    EXPECT_THROW(io::read_labels(p), Error);
    std::ofstream(p) << "0\nyes\n";
    EXPECT_THROW(io::read_labels(p), Error);
}
