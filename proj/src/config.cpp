#include "glocalk/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace glocalk {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad real for " + key + ": '" + v + "'");
    }
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long r = std::stoll(v, &pos);
        if (pos != v.size() || r < 0) throw std::invalid_argument(v);
        return static_cast<std::size_t>(r);
    } catch (const std::exception&) {
        throw ConfigError("config: bad count for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad bool for " + key + ": '" + v + "'");
}

std::vector<std::uint64_t> parse_seeds(const std::string& v) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) continue;
        try {
            out.push_back(std::stoull(part));
        } catch (const std::exception&) {
            throw ConfigError("config: bad seed list entry '" + part + "'");
        }
    }
    if (out.empty()) throw ConfigError("config: empty seed list");
    return out;
}

} // namespace

void ExperimentConfig::validate() const {
    if (dataset != "ml100k" && dataset != "ml1m" && dataset != "triplets")
        throw ConfigError("config: unknown dataset '" + dataset + "'");
    if (split != "canonical" && split != "random")
        throw ConfigError("config: split must be canonical or random");
    if (split == "random" && !(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("config: test_fraction must be in (0,1)");
    if (agg_mode != "weighted" && agg_mode != "avg")
        throw ConfigError("config: agg_mode must be weighted or avg");
    if (h < 1) throw ConfigError("config: h must be >= 1");
    if (d < 1) throw ConfigError("config: d must be >= 1");
    if (t % 2 == 0 || t < 1) throw ConfigError("config: t must be odd");
    if (conv_layers < 1) throw ConfigError("config: conv_layers must be >= 1");
    if (lambda2 < 0.0 || lambda_s < 0.0) throw ConfigError("config: lambdas must be >= 0");
    if (!(train_ratio > 0.0 && train_ratio <= 1.0))
        throw ConfigError("config: train_ratio must be in (0,1]");
    if (seeds.empty()) throw ConfigError("config: seed list is empty");
    if (!(rating_min < rating_max)) throw ConfigError("config: rating range is empty");
    if (refresh_mu && carry_memory)
        throw ConfigError("config: refresh_mu invalidates carried curvature pairs; "
                          "use one or the other");
}

AggregationMode ExperimentConfig::aggregation() const {
    return agg_mode == "avg" ? AggregationMode::ElementwiseAvg : AggregationMode::Weighted;
}

std::string ExperimentConfig::serialize() const {
    std::ostringstream os;
    os << "dataset = " << dataset << "\n";
    os << "data_path = " << data_path << "\n";
    os << "test_path = " << test_path << "\n";
    os << "split = " << split << "\n";
    os << "test_fraction = " << fmt(test_fraction) << "\n";
    os << "h = " << h << "\n";
    os << "num_hidden = " << num_hidden << "\n";
    os << "d = " << d << "\n";
    os << "t = " << t << "\n";
    os << "conv_layers = " << conv_layers << "\n";
    os << "agg_mode = " << agg_mode << "\n";
    os << "lambda2 = " << fmt(lambda2) << "\n";
    os << "lambda_s = " << fmt(lambda_s) << "\n";
    os << "maxiter_p = " << maxiter_p << "\n";
    os << "maxiter_f = " << maxiter_f << "\n";
    os << "pretrain_epochs = " << pretrain_epochs << "\n";
    os << "finetune_epochs = " << finetune_epochs << "\n";
    os << "train_ratio = " << fmt(train_ratio) << "\n";
    os << "seeds = ";
    for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
    os << "\n";
    os << "rating_min = " << fmt(rating_min) << "\n";
    os << "rating_max = " << fmt(rating_max) << "\n";
    os << "kernelize_all = " << (kernelize_all ? "true" : "false") << "\n";
    os << "reg_kernel_on_uv = " << (reg_kernel_on_uv ? "true" : "false") << "\n";
    os << "refresh_mu = " << (refresh_mu ? "true" : "false") << "\n";
    os << "carry_memory = " << (carry_memory ? "true" : "false") << "\n";
    return os.str();
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(serialize()); }

void ExperimentConfig::set_kv(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "dataset") dataset = v;
    else if (key == "data_path") data_path = v;
    else if (key == "test_path") test_path = v;
    else if (key == "split") split = v;
    else if (key == "test_fraction") test_fraction = parse_real(key, v);
    else if (key == "h") h = parse_count(key, v);
    else if (key == "num_hidden") num_hidden = parse_count(key, v);
    else if (key == "d") d = parse_count(key, v);
    else if (key == "t") t = parse_count(key, v);
    else if (key == "conv_layers") conv_layers = parse_count(key, v);
    else if (key == "agg_mode") agg_mode = v;
    else if (key == "lambda2") lambda2 = parse_real(key, v);
    else if (key == "lambda_s") lambda_s = parse_real(key, v);
    else if (key == "maxiter_p") maxiter_p = parse_count(key, v);
    else if (key == "maxiter_f") maxiter_f = parse_count(key, v);
    else if (key == "pretrain_epochs") pretrain_epochs = parse_count(key, v);
    else if (key == "finetune_epochs") finetune_epochs = parse_count(key, v);
    else if (key == "train_ratio") train_ratio = parse_real(key, v);
    else if (key == "seeds") seeds = parse_seeds(v);
    else if (key == "rating_min") rating_min = parse_real(key, v);
    else if (key == "rating_max") rating_max = parse_real(key, v);
    else if (key == "kernelize_all") kernelize_all = parse_bool(key, v);
    else if (key == "reg_kernel_on_uv") reg_kernel_on_uv = parse_bool(key, v);
    else if (key == "refresh_mu") refresh_mu = parse_bool(key, v);
    else if (key == "carry_memory") carry_memory = parse_bool(key, v);
    else if (key == "out_dir") out_dir = v;
    else throw ConfigError("config: unknown key '" + key + "'");
}

ExperimentConfig ExperimentConfig::defaults_for(const std::string& dataset) {
    ExperimentConfig c;
    c.dataset = dataset;
    if (dataset == "ml100k") {
        c.lambda2 = 20.0;
        c.lambda_s = 0.006;
        c.maxiter_p = 5;
        c.maxiter_f = 5;
        c.pretrain_epochs = 30;
        c.split = "canonical";
    } else if (dataset == "ml1m") {
        c.lambda2 = 70.0;
        c.lambda_s = 0.018;
        c.maxiter_p = 50;
        c.maxiter_f = 10;
        c.pretrain_epochs = 20;
        c.split = "random";
    } else if (dataset == "triplets") {
        c.lambda2 = 10.0;
        c.lambda_s = 0.022;
        c.maxiter_p = 5;
        c.maxiter_f = 5;
        c.pretrain_epochs = 20;
        c.split = "canonical";
    } else {
        throw ConfigError("config: unknown dataset '" + dataset + "'");
    }
    return c;
}

void apply_config_file(const std::string& path, ExperimentConfig& base) {
    std::ifstream in(path);
    if (!in) throw ParseError("config: cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.resize(hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            base.set_kv(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

} // namespace glocalk
