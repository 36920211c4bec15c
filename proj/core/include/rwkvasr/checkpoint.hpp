#ifndef RWKVASR_CHECKPOINT_HPP
#define RWKVASR_CHECKPOINT_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rwkvasr/errors.hpp"
#include "rwkvasr/model.hpp"

// Checkpoint container:
//   magic "RWKVASR1" (8 bytes)
//   u32 little-endian header length
//   UTF-8 text header: "format 1", the model config lines, one
//     "tensor <name> <dtype> <rank> <extent>..." line per parameter in
//     declaration (visit) order, terminated by "end"
//   raw little-endian IEEE-754 payloads in declaration order, row-major
// Saving is deterministic, so save -> load -> save is byte-identical.

namespace rwkvasr {

inline constexpr char kCheckpointMagic[8] = {'R', 'W', 'K', 'V', 'A', 'S', 'R', '1'};
inline constexpr int kCheckpointFormat = 1;

struct TensorDecl {
    std::string name;
    std::string dtype;
    std::vector<std::int64_t> shape;
};

struct CheckpointHeader {
    int format = kCheckpointFormat;
    ModelConfig config;
    std::vector<TensorDecl> tensors;
};

std::string render_checkpoint_header(const ModelConfig& cfg, const std::vector<TensorDecl>& tensors);
CheckpointHeader parse_checkpoint_header(const std::string& text);

// Header-only peek: the payload dtype ("f32"/"f64"), for dispatching loads.
std::string checkpoint_dtype(const std::string& path);

namespace detail {
void write_checkpoint_preamble(std::ostream& out, const std::string& header);
std::string read_checkpoint_header_text(std::istream& in, const std::string& path);
}  // namespace detail

template <class T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
    std::vector<TensorDecl> decls;
    auto list = param_list(model.params);
    decls.reserve(list.size());
    for (const auto& [name, t] : list) decls.push_back({name, dtype_name(dtype_of<T>()), t->shape});

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("checkpoint: cannot write " + path);
    detail::write_checkpoint_preamble(out, render_checkpoint_header(model.config, decls));
    for (const auto& [name, t] : list)
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->numel() * static_cast<std::int64_t>(sizeof(T))));
    if (!out) throw FormatError("checkpoint: write failed for " + path);
}

template <class T>
Model<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path);
    const CheckpointHeader hdr = parse_checkpoint_header(detail::read_checkpoint_header_text(in, path));
    if (hdr.format != kCheckpointFormat)
        throw FormatError("checkpoint: unsupported format version " + std::to_string(hdr.format));

    Model<T> model{hdr.config, make_param_shapes<T>(hdr.config)};
    auto list = param_list(model.params);
    if (list.size() != hdr.tensors.size())
        throw FormatError("checkpoint: tensor count mismatch in " + path);
    for (std::size_t i = 0; i < list.size(); ++i) {
        const TensorDecl& d = hdr.tensors[i];
        if (d.name != list[i].first)
            throw FormatError("checkpoint: unexpected tensor '" + d.name + "' (want '" + list[i].first + "')");
        if (d.dtype != dtype_name(dtype_of<T>()))
            throw FormatError("checkpoint: tensor '" + d.name + "' has dtype " + d.dtype + ", want " +
                              dtype_name(dtype_of<T>()));
        if (d.shape != list[i].second->shape)
            throw FormatError("checkpoint: shape mismatch for tensor '" + d.name + "'");
        Tensor<T>* t = list[i].second;
        in.read(reinterpret_cast<char*>(t->data.data()),
                static_cast<std::streamsize>(t->numel() * static_cast<std::int64_t>(sizeof(T))));
        if (!in) throw FormatError("checkpoint: truncated payload at tensor '" + d.name + "' in " + path);
    }
    char extra;
    if (in.read(&extra, 1)) throw FormatError("checkpoint: trailing bytes in " + path);
    return model;
}

}  // namespace rwkvasr

#endif
