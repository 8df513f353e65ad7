#include "maa/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include "maa/common.hpp"

namespace maa {

AdapterMode adapter_mode_from_string(const std::string& s) {
    if (s == "independent") return AdapterMode::independent;
    if (s == "shared") return AdapterMode::shared;
    if (s == "none") return AdapterMode::none;
    throw ConfigError("config: unknown adapter_mode '" + s + "'");
}

const char* to_string(AdapterMode m) {
    switch (m) {
        case AdapterMode::independent: return "independent";
        case AdapterMode::shared: return "shared";
        case AdapterMode::none: return "none";
    }
    return "?";
}

EncoderNorm encoder_norm_from_string(const std::string& s) {
    if (s == "post") return EncoderNorm::post;
    if (s == "pre") return EncoderNorm::pre;
    throw ConfigError("config: unknown encoder_norm '" + s + "'");
}

const char* to_string(EncoderNorm n) {
    return n == EncoderNorm::post ? "post" : "pre";
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int parse_int(const std::string& key, const std::string& value) {
    int out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + value + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
    }
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty() || !s.empty()) out.push_back(cur);
    return out;
}

std::string join(const std::vector<std::string>& v, char sep) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out.push_back(sep);
        out += v[i];
    }
    return out;
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
    if (key == "dim") dim = parse_int(key, value);
    else if (key == "ffn_dim") ffn_dim = parse_int(key, value);
    else if (key == "heads") heads = parse_int(key, value);
    else if (key == "layers") layers = parse_int(key, value);
    else if (key == "adapter_mode") adapter_mode = adapter_mode_from_string(value);
    else if (key == "activation") activation = activation_from_string(value);
    else if (key == "encoder_norm") encoder_norm = encoder_norm_from_string(value);
    else if (key == "dropout") dropout = parse_double(key, value);
    else if (key == "ln_eps") ln_eps = parse_double(key, value);
    else if (key == "modalities") {
        modalities.clear();
        if (!value.empty()) modalities = split(value, ',');
    } else if (key == "max_seq_len") max_seq_len = parse_int(key, value);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "beta1") beta1 = parse_double(key, value);
    else if (key == "beta2") beta2 = parse_double(key, value);
    else if (key == "adam_eps") adam_eps = parse_double(key, value);
    else if (key == "weight_decay") weight_decay = parse_double(key, value);
    else if (key == "clip_norm") clip_norm = parse_double(key, value);
    else if (key == "warmup_epochs") warmup_epochs = parse_int(key, value);
    else if (key == "t0_epochs") t0_epochs = parse_int(key, value);
    else if (key == "t_mult") t_mult = parse_int(key, value);
    else if (key == "eta_min") eta_min = parse_double(key, value);
    else if (key == "epochs") epochs = parse_int(key, value);
    else if (key == "batch_size") batch_size = parse_int(key, value);
    else if (key == "seed") seed = parse_u64(key, value);
    else if (key == "precision") precision = parse_int(key, value);
    else if (key == "data.classes") data.classes = static_cast<std::uint32_t>(parse_int(key, value));
    else if (key == "data.class_names") {
        data.class_names.clear();
        if (!value.empty()) data.class_names = split(value, ',');
    } else if (key == "data.modalities") {
        data.modalities.clear();
        if (!value.empty()) {
            for (const auto& item : split(value, ';')) {
                const auto parts = split(item, ':');
                if (parts.size() != 3) {
                    throw ConfigError("config: data.modalities entry '" + item +
                                      "' is not name:id:dim");
                }
                ModalityInfo info;
                info.name = parts[0];
                info.id = static_cast<std::uint8_t>(parse_int(key, parts[1]));
                info.dim = static_cast<std::uint32_t>(parse_int(key, parts[2]));
                data.modalities.push_back(std::move(info));
            }
        }
    } else {
        throw ConfigError("config: unknown key '" + key + "'");
    }
}

std::string TrainConfig::canonical_text() const {
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("activation", to_string(activation));
    kv.emplace_back("adam_eps", format_double(adam_eps));
    kv.emplace_back("adapter_mode", to_string(adapter_mode));
    kv.emplace_back("batch_size", std::to_string(batch_size));
    kv.emplace_back("beta1", format_double(beta1));
    kv.emplace_back("beta2", format_double(beta2));
    kv.emplace_back("clip_norm", format_double(clip_norm));
    kv.emplace_back("dim", std::to_string(dim));
    kv.emplace_back("dropout", format_double(dropout));
    kv.emplace_back("encoder_norm", to_string(encoder_norm));
    kv.emplace_back("epochs", std::to_string(epochs));
    kv.emplace_back("eta_min", format_double(eta_min));
    kv.emplace_back("ffn_dim", std::to_string(ffn_dim));
    kv.emplace_back("heads", std::to_string(heads));
    kv.emplace_back("layers", std::to_string(layers));
    kv.emplace_back("ln_eps", format_double(ln_eps));
    kv.emplace_back("lr", format_double(lr));
    kv.emplace_back("max_seq_len", std::to_string(max_seq_len));
    kv.emplace_back("modalities", join(modalities, ','));
    kv.emplace_back("precision", std::to_string(precision));
    kv.emplace_back("seed", std::to_string(seed));
    kv.emplace_back("t0_epochs", std::to_string(t0_epochs));
    kv.emplace_back("t_mult", std::to_string(t_mult));
    kv.emplace_back("warmup_epochs", std::to_string(warmup_epochs));
    kv.emplace_back("weight_decay", format_double(weight_decay));
    if (data.resolved()) {
        kv.emplace_back("data.classes", std::to_string(data.classes));
        kv.emplace_back("data.class_names", join(data.class_names, ','));
        std::vector<std::string> mods;
        for (const auto& m : data.modalities) {
            mods.push_back(m.name + ":" + std::to_string(m.id) + ":" + std::to_string(m.dim));
        }
        kv.emplace_back("data.modalities", join(mods, ';'));
    }
    std::sort(kv.begin(), kv.end());
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out.push_back('=');
        out += v;
        out.push_back('\n');
    }
    return out;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // Strip comments and surrounding whitespace.
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value: '" +
                              line + "'");
        }
        cfg.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

TrainConfig TrainConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

void TrainConfig::validate() const {
    if (dim < 2) throw ConfigError("config: dim must be >= 2");
    if (ffn_dim < 1) throw ConfigError("config: ffn_dim must be >= 1");
    if (heads < 1) throw ConfigError("config: heads must be >= 1");
    if (dim % heads != 0) throw ConfigError("config: dim must be divisible by heads");
    if (layers < 0) throw ConfigError("config: layers must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must be in [0, 1)");
    if (ln_eps <= 0.0) throw ConfigError("config: ln_eps must be positive");
    if (max_seq_len < 1) throw ConfigError("config: max_seq_len must be >= 1");
    if (lr < 0.0) throw ConfigError("config: lr must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("config: betas must be in [0, 1)");
    }
    if (adam_eps <= 0.0) throw ConfigError("config: adam_eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be >= 0");
    if (clip_norm < 0.0) throw ConfigError("config: clip_norm must be >= 0");
    if (warmup_epochs < 0) throw ConfigError("config: warmup_epochs must be >= 0");
    if (t0_epochs < 1) throw ConfigError("config: t0_epochs must be >= 1");
    if (t_mult < 1) throw ConfigError("config: t_mult must be >= 1");
    if (eta_min < 0.0) throw ConfigError("config: eta_min must be >= 0");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (precision != 32 && precision != 64) throw ConfigError("config: precision must be 32 or 64");
    for (const auto& name : data.class_names) {
        if (name.find(',') != std::string::npos) {
            throw ConfigError("config: class names must not contain commas");
        }
    }
}

bool TrainConfig::is_resumable_key(const std::string& key) {
    return key == "epochs";
}

}  // namespace maa
