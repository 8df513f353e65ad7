#include "maa/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "maa/common.hpp"

namespace maa {

namespace {

constexpr char kMagic[4] = {'M', 'A', 'A', 'C'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string state_text(const TrainState& s) {
    char buf[64];
    std::string out;
    out += "adamw_t=" + std::to_string(s.adamw_t) + "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", s.best_val_map);
    out += std::string("best_val_map=") + buf + "\n";
    out += "epochs_done=" + std::to_string(s.epochs_done) + "\n";
    out += "global_step=" + std::to_string(s.global_step) + "\n";
    return out;
}

TrainState parse_state(const std::string& text) {
    TrainState s;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "adamw_t") s.adamw_t = std::stoll(value);
        else if (key == "best_val_map") s.best_val_map = std::stod(value);
        else if (key == "epochs_done") s.epochs_done = std::stoll(value);
        else if (key == "global_step") s.global_step = std::stoll(value);
        else throw FormatError("checkpoint: unknown state key '" + key + "'");
    }
    return s;
}

struct ManifestEntry {
    std::string name;
    std::uint32_t rows = 0, cols = 0;
    std::uint64_t offset = 0;
};

class Reader {
public:
    Reader(std::ifstream& in, const std::string& path) : in_(in), path_(path) {}

    void read_exact(void* dst, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError("checkpoint: truncated '" + path_ + "' reading " + what +
                              " at byte offset " + std::to_string(offset_));
        }
        offset_ += n;
    }

    std::uint16_t u16(const char* what) {
        unsigned char b[2];
        read_exact(b, 2, what);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        read_exact(b, 4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::uint64_t u64(const char* what) {
        unsigned char b[8];
        read_exact(b, 8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    std::string text(std::size_t len, const char* what) {
        std::string s(len, '\0');
        if (len) read_exact(s.data(), len, what);
        return s;
    }

private:
    std::ifstream& in_;
    const std::string& path_;
    std::uint64_t offset_ = 0;
};

}  // namespace

const Matrix<float>* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
        if (n == name) return &m;
    }
    return nullptr;
}

bool Checkpoint::has_optimizer_state() const {
    for (const auto& [n, m] : tensors) {
        if (n.starts_with("adamw.m.")) return true;
    }
    return false;
}

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const MaaModel<float>& model, const AdamW<float>* optimizer,
                     const TrainState& state) {
    std::vector<std::pair<std::string, const Matrix<float>*>> tensors;
    const auto params = model.params();
    for (const auto* p : params) tensors.emplace_back(p->name, &p->value);
    if (optimizer) {
        if (optimizer->slot_count() != params.size()) {
            throw ShapeError("checkpoint: optimizer does not match model parameters");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            tensors.emplace_back("adamw.m." + params[i]->name, &optimizer->first_moment(i));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            tensors.emplace_back("adamw.v." + params[i]->name, &optimizer->second_moment(i));
        }
    }

    std::string head;
    head.append(kMagic, 4);
    put_u16(head, kVersion);
    put_u32(head, static_cast<std::uint32_t>(config_text.size()));
    head += config_text;
    const std::string st = state_text(state);
    put_u32(head, static_cast<std::uint32_t>(st.size()));
    head += st;
    put_u32(head, static_cast<std::uint32_t>(tensors.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, mat] : tensors) {
        put_u16(head, static_cast<std::uint16_t>(name.size()));
        head += name;
        put_u32(head, static_cast<std::uint32_t>(mat->rows()));
        put_u32(head, static_cast<std::uint32_t>(mat->cols()));
        put_u64(head, offset);
        offset += mat->size() * sizeof(float);
    }
    put_u64(head, offset);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, mat] : tensors) {
        out.write(reinterpret_cast<const char*>(mat->raw().data()),
                  static_cast<std::streamsize>(mat->size() * sizeof(float)));
    }
    out.flush();
    if (!out) throw IoError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    Reader r(in, path);
    char magic[4];
    r.read_exact(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic in '" + path + "'");
    }
    const std::uint16_t version = r.u16("version");
    if (version != kVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config_text = r.text(r.u32("config length"), "config text");
    ckpt.state = parse_state(r.text(r.u32("state length"), "state text"));
    const std::uint32_t count = r.u32("manifest count");
    std::vector<ManifestEntry> manifest(count);
    for (auto& e : manifest) {
        e.name = r.text(r.u16("tensor name length"), "tensor name");
        e.rows = r.u32("tensor rows");
        e.cols = r.u32("tensor cols");
        e.offset = r.u64("tensor offset");
    }
    const std::uint64_t blob_size = r.u64("blob size");
    std::uint64_t expected = 0;
    for (const auto& e : manifest) {
        const std::uint64_t bytes = static_cast<std::uint64_t>(e.rows) * e.cols * sizeof(float);
        if (e.offset != expected) {
            throw FormatError("checkpoint: tensor '" + e.name + "' has unexpected offset");
        }
        expected += bytes;
    }
    if (expected != blob_size) {
        throw FormatError("checkpoint: blob size does not match manifest");
    }
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint reader assumes a little-endian host");
    ckpt.tensors.reserve(count);
    for (const auto& e : manifest) {
        Matrix<float> m(static_cast<int>(e.rows), static_cast<int>(e.cols));
        if (m.size() > 0) {
            r.read_exact(m.raw().data(), m.size() * sizeof(float), "tensor values");
        }
        ckpt.tensors.emplace_back(e.name, std::move(m));
    }
    return ckpt;
}

void apply_to_model(const Checkpoint& ckpt, MaaModel<float>& model) {
    for (auto* p : model.params()) {
        const Matrix<float>* src = ckpt.find(p->name);
        if (!src) throw FormatError("checkpoint: missing tensor '" + p->name + "'");
        if (!src->same_shape(p->value)) {
            throw FormatError("checkpoint: tensor '" + p->name + "' has mismatched shape");
        }
        p->value = *src;
    }
}

void apply_to_optimizer(const Checkpoint& ckpt, std::span<ParamTensor<float>* const> params,
                        AdamW<float>& optimizer) {
    if (optimizer.slot_count() != params.size()) {
        throw ShapeError("checkpoint: optimizer does not match model parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix<float>* m = ckpt.find("adamw.m." + params[i]->name);
        const Matrix<float>* v = ckpt.find("adamw.v." + params[i]->name);
        if (!m || !v) {
            throw FormatError("checkpoint: missing optimizer state for '" + params[i]->name + "'");
        }
        if (!m->same_shape(optimizer.first_moment(i)) || !v->same_shape(optimizer.second_moment(i))) {
            throw FormatError("checkpoint: optimizer state shape mismatch for '" + params[i]->name + "'");
        }
        optimizer.first_moment(i) = *m;
        optimizer.second_moment(i) = *v;
    }
    optimizer.set_step_count(ckpt.state.adamw_t);
}

}  // namespace maa
