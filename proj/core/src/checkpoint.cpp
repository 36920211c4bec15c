#include "rwkvasr/checkpoint.hpp"

#include <cstring>
#include <sstream>

namespace rwkvasr {

std::string render_checkpoint_header(const ModelConfig& cfg, const std::vector<TensorDecl>& tensors) {
    std::ostringstream os;
    os << "format " << kCheckpointFormat << '\n';
    os << render_model_config(cfg);
    for (const auto& d : tensors) {
        os << "tensor " << d.name << ' ' << d.dtype << ' ' << d.shape.size();
        for (auto e : d.shape) os << ' ' << e;
        os << '\n';
    }
    os << "end\n";
    return os.str();
}

CheckpointHeader parse_checkpoint_header(const std::string& text) {
    CheckpointHeader hdr;
    std::istringstream in(text);
    std::string line;
    bool have_format = false, have_end = false;
    int config_keys = 0;

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            if (!(ls >> hdr.format)) throw FormatError("checkpoint: malformed format line");
            have_format = true;
        } else if (word == "config") {
            std::string key, value;
            if (!(ls >> key >> value)) throw FormatError("checkpoint: malformed config line '" + line + "'");
            ++config_keys;
            try {
                if (key == "d_io") hdr.config.d_io = std::stoi(value);
                else if (key == "d_att") hdr.config.d_att = std::stoi(value);
                else if (key == "d_linear") hdr.config.d_linear = std::stoi(value);
                else if (key == "blocks") hdr.config.blocks = std::stoi(value);
                else if (key == "dropout") hdr.config.dropout = std::stod(value);
                else if (key == "n_mels") hdr.config.n_mels = std::stoi(value);
                else if (key == "conv_channels") hdr.config.conv_channels = std::stoi(value);
                else if (key == "vocab") hdr.config.vocab = std::stoi(value);
                else if (key == "d_pred") hdr.config.d_pred = std::stoi(value);
                else if (key == "d_joint") hdr.config.d_joint = std::stoi(value);
                else throw FormatError("checkpoint: unknown config key '" + key + "'");
            } catch (const FormatError&) {
                throw;
            } catch (const std::exception&) {
                throw FormatError("checkpoint: bad value for config key '" + key + "'");
            }
        } else if (word == "tensor") {
            TensorDecl d;
            std::size_t rank = 0;
            if (!(ls >> d.name >> d.dtype >> rank)) throw FormatError("checkpoint: malformed tensor line '" + line + "'");
            if (d.dtype != "f32" && d.dtype != "f64")
                throw FormatError("checkpoint: unknown dtype '" + d.dtype + "' for tensor '" + d.name + "'");
            if (rank > 3) throw FormatError("checkpoint: rank > 3 for tensor '" + d.name + "'");
            d.shape.resize(rank);
            for (std::size_t i = 0; i < rank; ++i) {
                if (!(ls >> d.shape[i]) || d.shape[i] < 0)
                    throw FormatError("checkpoint: bad extents for tensor '" + d.name + "'");
            }
            hdr.tensors.push_back(std::move(d));
        } else if (word == "end") {
            have_end = true;
            break;
        } else {
            throw FormatError("checkpoint: unknown header line '" + line + "'");
        }
    }
    if (!have_format) throw FormatError("checkpoint: header missing format line");
    if (!have_end) throw FormatError("checkpoint: header missing end line");
    if (config_keys != 10) throw FormatError("checkpoint: header must carry exactly the 10 model config keys");
    hdr.config.validate();
    return hdr;
}

namespace detail {

void write_checkpoint_preamble(std::ostream& out, const std::string& header) {
    out.write(kCheckpointMagic, 8);
    const std::uint32_t len = static_cast<std::uint32_t>(header.size());
    const char b[4] = {static_cast<char>(len & 0xff), static_cast<char>((len >> 8) & 0xff),
                       static_cast<char>((len >> 16) & 0xff), static_cast<char>((len >> 24) & 0xff)};
    out.write(b, 4);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
}

std::string read_checkpoint_header_text(std::istream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    unsigned char lb[4];
    in.read(reinterpret_cast<char*>(lb), 4);
    if (!in) throw FormatError("checkpoint: truncated header length in " + path);
    const std::uint32_t len = static_cast<std::uint32_t>(lb[0]) | (static_cast<std::uint32_t>(lb[1]) << 8) |
                              (static_cast<std::uint32_t>(lb[2]) << 16) | (static_cast<std::uint32_t>(lb[3]) << 24);
    if (len > (1u << 24)) throw FormatError("checkpoint: implausible header length in " + path);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw FormatError("checkpoint: truncated header in " + path);
    return text;
}

}  // namespace detail

std::string checkpoint_dtype(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path);
    const CheckpointHeader hdr = parse_checkpoint_header(detail::read_checkpoint_header_text(in, path));
    if (hdr.tensors.empty()) throw FormatError("checkpoint: no tensors declared in " + path);
    return hdr.tensors[0].dtype;
}

}  // namespace rwkvasr
