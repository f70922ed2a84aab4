#include "lore/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "lore/tensor_io.hpp"

namespace lore {

namespace {

void write_u32(std::ostream& os, uint32_t v) { detail::write_pod(os, v); }
uint32_t read_u32(std::istream& is, const char* what) { return detail::read_pod<uint32_t>(is, what); }

}  // namespace

void save_checkpoint(const std::string& path, ModelParams<float>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open checkpoint for write: " + path);
    os.write("LORE", 4);
    write_u32(os, kCheckpointVersion);
    const ModelConfig& c = params.cfg;
    for (int f : {c.image_size, c.patch, c.d_model, c.heads, c.layers, c.vocab_size,
                  c.max_text_tokens, c.time_embed_dim})
        write_u32(os, static_cast<uint32_t>(f));
    auto named = params.named_params();
    write_u32(os, static_cast<uint32_t>(named.size()));
    for (auto& [name, tensor] : named) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor_blob(os, *tensor);
    }
    if (!os) throw io_error("checkpoint write failed: " + path);
}

ModelParams<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open checkpoint for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LORE", 4) != 0) throw io_error("bad checkpoint magic");
    const uint32_t version = read_u32(is, "version");
    if (version != kCheckpointVersion)
        throw io_error("unsupported checkpoint version " + std::to_string(version));

    ModelConfig cfg;
    cfg.image_size = static_cast<int>(read_u32(is, "image_size"));
    cfg.patch = static_cast<int>(read_u32(is, "patch"));
    cfg.d_model = static_cast<int>(read_u32(is, "d_model"));
    cfg.heads = static_cast<int>(read_u32(is, "heads"));
    cfg.layers = static_cast<int>(read_u32(is, "layers"));
    cfg.vocab_size = static_cast<int>(read_u32(is, "vocab_size"));
    cfg.max_text_tokens = static_cast<int>(read_u32(is, "max_text_tokens"));
    cfg.time_embed_dim = static_cast<int>(read_u32(is, "time_embed_dim"));
    cfg.validate();

    Rng unused(0);
    ModelParams<float> params = init_params<float>(cfg, unused);
    params.set_requires_grad(false);
    auto named = params.named_params();

    const uint32_t count = read_u32(is, "tensor count");
    if (count != named.size())
        throw io_error("checkpoint tensor count mismatch: " + std::to_string(count));
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(is, "name length");
        if (name_len > 256) throw io_error("implausible tensor name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw io_error("truncated tensor name");
        if (name != named[i].first)
            throw io_error("unexpected tensor '" + name + "', wanted '" + named[i].first + "'");
        Tensor<float> t = read_tensor_blob(is);
        if (t.shape() != named[i].second->shape())
            throw io_error("tensor shape mismatch for '" + name + "'");
        std::copy(t.values().begin(), t.values().end(),
                  named[i].second->values_mut().begin());
    }
    return params;
}

}  // namespace lore
