#ifndef RWKVASR_WAV_HPP
#define RWKVASR_WAV_HPP

#include <cstdint>
#include <string>
#include <vector>

// Minimal RIFF/WAVE reader and writer for 16-bit PCM mono audio. Samples are
// exposed as float in [-1, 1) using the fixed scale 1/32768.

namespace rwkvasr {

struct WavData {
    std::uint32_t sample_rate = 0;
    std::vector<float> samples;
};

// Throws FormatError on anything that is not 16-bit PCM mono.
WavData read_wav(const std::string& path);

void write_wav(const std::string& path, const WavData& wav);

}  // namespace rwkvasr

#endif
