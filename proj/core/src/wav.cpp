#include "rwkvasr/wav.hpp"

#include <cstring>
#include <fstream>

#include "rwkvasr/errors.hpp"

namespace rwkvasr {

namespace {

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("wav: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw FormatError("wav: truncated file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b, 2);
}

}  // namespace

WavData read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("wav: cannot open " + path);

    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw FormatError("wav: missing RIFF header in " + path);
    read_u32(in);  // file size, unused
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw FormatError("wav: missing WAVE tag in " + path);

    WavData wav;
    bool have_fmt = false;
    std::uint16_t bits = 0, channels = 0, format = 0;

    while (in.read(tag, 4)) {
        const std::uint32_t chunk_size = read_u32(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (chunk_size < 16) throw FormatError("wav: fmt chunk too small");
            format = read_u16(in);
            channels = read_u16(in);
            wav.sample_rate = read_u32(in);
            read_u32(in);  // byte rate
            read_u16(in);  // block align
            bits = read_u16(in);
            in.seekg(chunk_size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
            if (format != 1) throw FormatError("wav: only PCM (format 1) is supported");
            if (bits != 16) throw FormatError("wav: only 16-bit samples are supported");
            if (channels != 1) throw FormatError("wav: only mono audio is supported");
            const std::size_t n = chunk_size / 2;
            wav.samples.resize(n);
            std::vector<unsigned char> raw(chunk_size);
            in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(chunk_size));
            if (!in) throw FormatError("wav: truncated data chunk");
            for (std::size_t i = 0; i < n; ++i) {
                const std::int16_t s = static_cast<std::int16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
                wav.samples[i] = static_cast<float>(s) / 32768.0f;
            }
            return wav;
        } else {
            // skip unknown chunk (plus pad byte for odd sizes)
            in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
        }
    }
    throw FormatError("wav: no data chunk in " + path);
}

void write_wav(const std::string& path, const WavData& wav) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("wav: cannot write " + path);
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
    out.write("RIFF", 4);
    write_u32(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32(out, 16);
    write_u16(out, 1);   // PCM
    write_u16(out, 1);   // mono
    write_u32(out, wav.sample_rate);
    write_u32(out, wav.sample_rate * 2);
    write_u16(out, 2);
    write_u16(out, 16);
    out.write("data", 4);
    write_u32(out, data_bytes);
    for (float s : wav.samples) {
        float clamped = s < -1.0f ? -1.0f : (s > 0.999969f ? 0.999969f : s);
        const std::int16_t q = static_cast<std::int16_t>(clamped * 32768.0f);
        write_u16(out, static_cast<std::uint16_t>(q));
    }
    if (!out) throw FormatError("wav: write failed for " + path);
}

}  // namespace rwkvasr
