#include "rwkvasr/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "rwkvasr/errors.hpp"

namespace rwkvasr {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return r;
    } catch (const std::exception&) {
        throw FormatError("config: key '" + key + "' needs an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return r;
    } catch (const std::exception&) {
        throw FormatError("config: key '" + key + "' needs a number, got '" + v + "'");
    }
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw FormatError("config: " + msg);
}

}  // namespace

void ModelConfig::validate() const {
    require(d_io > 0 && d_att > 0 && d_linear > 0, "model dimensions must be positive");
    require(blocks >= 0, "blocks must be non-negative");
    require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0,1)");
    require(n_mels >= 7, "n_mels must be at least 7 to survive subsampling");
    require(conv_channels > 0, "conv_channels must be positive");
    require(vocab >= 1, "vocab must be at least 1");
    require(d_pred > 0 && d_joint > 0, "predictor/joint dimensions must be positive");
}

void TrainConfig::validate() const {
    require(lr >= 0.0, "lr must be non-negative");
    require(epochs >= 0, "epochs must be non-negative");
    require(batch > 0, "batch must be positive");
    require(loss == "full" || loss == "bat", "loss must be 'full' or 'bat'");
    require(band_width >= 2, "band_width must be at least 2");
    require(utterances > 0, "utterances must be positive");
    require(label_min >= 1 && label_max >= label_min, "label length range invalid");
    require(holdout >= 0 && holdout < utterances, "holdout must leave training data");
    require(noise >= 0.0, "noise must be non-negative");
    require(aug_noise >= 0.0, "aug_noise must be non-negative");
    require(cif_pretrain_epochs >= 0, "cif_pretrain_epochs must be non-negative");
    require(early_stop_accuracy >= 0.0 && early_stop_accuracy <= 1.0, "early_stop_accuracy must lie in [0,1]");
}

FullConfig parse_config_text(const std::string& text) {
    FullConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw FormatError("config: line " + std::to_string(lineno) + " is not key=value: '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key.empty()) throw FormatError("config: empty key on line " + std::to_string(lineno));

        if (key == "d_io") cfg.model.d_io = parse_int(key, val);
        else if (key == "d_att") cfg.model.d_att = parse_int(key, val);
        else if (key == "d_linear") cfg.model.d_linear = parse_int(key, val);
        else if (key == "blocks") cfg.model.blocks = parse_int(key, val);
        else if (key == "dropout") cfg.model.dropout = parse_double(key, val);
        else if (key == "n_mels") cfg.model.n_mels = parse_int(key, val);
        else if (key == "conv_channels") cfg.model.conv_channels = parse_int(key, val);
        else if (key == "vocab") cfg.model.vocab = parse_int(key, val);
        else if (key == "d_pred") cfg.model.d_pred = parse_int(key, val);
        else if (key == "d_joint") cfg.model.d_joint = parse_int(key, val);
        else if (key == "lr") cfg.train.lr = parse_double(key, val);
        else if (key == "epochs") cfg.train.epochs = parse_int(key, val);
        else if (key == "batch") cfg.train.batch = parse_int(key, val);
        else if (key == "loss") cfg.train.loss = val;
        else if (key == "band_width") cfg.train.band_width = parse_int(key, val);
        else if (key == "utterances") cfg.train.utterances = parse_int(key, val);
        else if (key == "label_min") cfg.train.label_min = parse_int(key, val);
        else if (key == "label_max") cfg.train.label_max = parse_int(key, val);
        else if (key == "holdout") cfg.train.holdout = parse_int(key, val);
        else if (key == "noise") cfg.train.noise = parse_double(key, val);
        else if (key == "aug_noise") cfg.train.aug_noise = parse_double(key, val);
        else if (key == "cif_pretrain_epochs") cfg.train.cif_pretrain_epochs = parse_int(key, val);
        else if (key == "early_stop_accuracy") cfg.train.early_stop_accuracy = parse_double(key, val);
        else throw FormatError("config: unknown key '" + key + "' on line " + std::to_string(lineno));
    }
    cfg.model.validate();
    cfg.train.validate();
    return cfg;
}

FullConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string render_model_config(const ModelConfig& cfg) {
    char drop[64];
    std::snprintf(drop, sizeof(drop), "%.17g", cfg.dropout);
    std::ostringstream os;
    os << "config d_io " << cfg.d_io << '\n'
       << "config d_att " << cfg.d_att << '\n'
       << "config d_linear " << cfg.d_linear << '\n'
       << "config blocks " << cfg.blocks << '\n'
       << "config dropout " << drop << '\n'
       << "config n_mels " << cfg.n_mels << '\n'
       << "config conv_channels " << cfg.conv_channels << '\n'
       << "config vocab " << cfg.vocab << '\n'
       << "config d_pred " << cfg.d_pred << '\n'
       << "config d_joint " << cfg.d_joint << '\n';
    return os.str();
}

}  // namespace rwkvasr
