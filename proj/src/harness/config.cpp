#include "lcl/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lcl/errors.hpp"

namespace lcl {

using VKind = ValidationError::Kind;

namespace {

const std::vector<std::pair<Mode, std::string>>& mode_table() {
    static const std::vector<std::pair<Mode, std::string>> t{
        {Mode::Core, "core"},
        {Mode::Finetune, "finetune"},
        {Mode::Individual, "individual"},
        {Mode::Joint, "joint"},
        {Mode::ImageOnlyExpansion, "image_only_expansion"},
        {Mode::NoCgc, "no_cgc"},
        {Mode::NoCde, "no_cde"},
        {Mode::RandConcepts, "rand_concepts"},
    };
    return t;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& what) {
    throw ValidationError(VKind::InvalidValue, "config '" + key + "': cannot use '" + value + "' (" + what + ")");
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) bad(key, v, "trailing characters");
        if (!std::isfinite(d)) bad(key, v, "not finite");
        return d;
    } catch (const std::logic_error&) {
        bad(key, v, "expected a number");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v, "expected a nonnegative integer");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad(key, v, "expected true or false");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(static_cast<std::size_t>(to_u64(key, item)));
    }
    return out;
}

std::string fmt(double d) {
    std::ostringstream o;
    o << std::setprecision(17) << d;
    return o.str();
}

}  // namespace

std::string mode_name(Mode m) {
    for (const auto& [k, v] : mode_table())
        if (k == m) return v;
    return "?";
}

Mode parse_mode(const std::string& s) {
    for (const auto& [k, v] : mode_table())
        if (v == s) return k;
    throw ValidationError(VKind::InvalidValue, "unknown mode '" + s + "'");
}

const std::vector<std::string>& mode_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& [k, v] : mode_table()) n.push_back(v);
        return n;
    }();
    return names;
}

double RunConfig::effective_lambda() const { return mode == Mode::NoCgc ? 0.0 : lambda; }

void RunConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError(VKind::InvalidValue, "lambda must lie in [0, 1]");
    if (!(tau_c > 0.0 && tau_c < 1.0)) throw ValidationError(VKind::InvalidValue, "tau_c must lie in (0, 1)");
    if (!(tau_i > 0.0)) throw ValidationError(VKind::InvalidValue, "tau_i must be positive");
    if (epochs == 0) throw ValidationError(VKind::InvalidValue, "epochs must be positive");
    if (batch_size == 0) throw ValidationError(VKind::InvalidValue, "batch_size must be positive");
    if (!(lr > 0.0)) throw ValidationError(VKind::InvalidValue, "lr must be positive");
    if (weight_decay < 0.0) throw ValidationError(VKind::InvalidValue, "weight_decay must be nonnegative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw ValidationError(VKind::InvalidValue, "warmup_fraction must lie in [0, 1)");
    }
    if (concept_anchor_gain < 0.0) throw ValidationError(VKind::InvalidValue, "concept_anchor_gain must be nonnegative");
    try {
        backbone.validate();
    } catch (const Error& e) {
        throw ValidationError(VKind::InvalidValue, e.what());
    }
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    BackboneConfig& b = c.backbone;
    if (key == "seed") c.seed = to_u64(key, v);
    else if (key == "mode") c.mode = parse_mode(v);
    else if (key == "lambda") c.lambda = to_double(key, v);
    else if (key == "tau_c") c.tau_c = to_double(key, v);
    else if (key == "tau_i") c.tau_i = to_double(key, v);
    else if (key == "image_size") b.image = to_u64(key, v);
    else if (key == "patch") b.patch = to_u64(key, v);
    else if (key == "width") b.width = to_u64(key, v);
    else if (key == "blocks") b.blocks = to_u64(key, v);
    else if (key == "heads") b.heads = to_u64(key, v);
    else if (key == "mlp_ratio") b.mlp_ratio = to_u64(key, v);
    else if (key == "positional") b.positional = to_bool(key, v);
    else if (key == "rank") b.rank = to_u64(key, v);
    else if (key == "estimator_hidden") b.estimator_hidden = to_u64(key, v);
    else if (key == "expandable_blocks") b.expandable_blocks = to_list(key, v);
    else if (key == "epochs") c.epochs = to_u64(key, v);
    else if (key == "warmup_fraction") c.warmup_fraction = to_double(key, v);
    else if (key == "batch_size") c.batch_size = to_u64(key, v);
    else if (key == "lr") c.lr = to_double(key, v);
    else if (key == "weight_decay") c.weight_decay = to_double(key, v);
    else if (key == "stream") c.stream = v;
    else if (key == "samples_per_task") c.samples_per_task = to_u64(key, v);
    else if (key == "max_tasks") c.max_tasks = to_u64(key, v);
    else if (key == "concepts") c.concepts_path = v;
    else if (key == "concept_dim") c.concept_dim = to_u64(key, v);
    else if (key == "concept_anchor_gain") c.concept_anchor_gain = to_double(key, v);
    else if (key == "phi_warm_start") c.phi_warm_start = to_bool(key, v);
    else if (key == "tune_backbone") c.tune_backbone = to_bool(key, v);
    else if (key == "bwt_form") c.bwt_form = parse_bwt_form(v);
    else if (key == "release_data") c.release_data = to_bool(key, v);
    else if (key == "log_steps") c.log_steps = to_bool(key, v);
    else if (key == "log_routing") c.log_routing = to_bool(key, v);
    else if (key == "output_dir") c.output_dir = v;
    else throw ValidationError(VKind::InvalidValue, "unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(VKind::Parse, "config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(VKind::Parse, "cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    RunConfig cfg;
    apply_config_text(cfg, ss.str());
    return cfg;
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys{
        "seed", "mode", "lambda", "tau_c", "tau_i", "image_size", "patch", "width", "blocks", "heads", "mlp_ratio",
        "positional", "rank", "estimator_hidden", "expandable_blocks", "epochs", "warmup_fraction", "batch_size",
        "lr", "weight_decay", "stream", "samples_per_task", "max_tasks", "concepts", "concept_dim",
        "concept_anchor_gain", "phi_warm_start", "tune_backbone", "bwt_form", "release_data", "log_steps", "log_routing",
        "output_dir"};
    return keys;
}

std::string config_to_text(const RunConfig& c) {
    const BackboneConfig& b = c.backbone;
    std::ostringstream o;
    auto kv = [&](const std::string& k, const std::string& v) { o << k << " = " << v << '\n'; };
    auto tf = [](bool x) { return std::string(x ? "true" : "false"); };
    std::string blocks;
    for (std::size_t i = 0; i < b.expandable_blocks.size(); ++i) blocks += (i ? "," : "") + std::to_string(b.expandable_blocks[i]);
    kv("seed", std::to_string(c.seed));
    kv("mode", mode_name(c.mode));
    kv("lambda", fmt(c.lambda));
    kv("tau_c", fmt(c.tau_c));
    kv("tau_i", fmt(c.tau_i));
    kv("image_size", std::to_string(b.image));
    kv("patch", std::to_string(b.patch));
    kv("width", std::to_string(b.width));
    kv("blocks", std::to_string(b.blocks));
    kv("heads", std::to_string(b.heads));
    kv("mlp_ratio", std::to_string(b.mlp_ratio));
    kv("positional", tf(b.positional));
    kv("rank", std::to_string(b.rank));
    kv("estimator_hidden", std::to_string(b.estimator_hidden));
    kv("expandable_blocks", blocks);
    kv("epochs", std::to_string(c.epochs));
    kv("warmup_fraction", fmt(c.warmup_fraction));
    kv("batch_size", std::to_string(c.batch_size));
    kv("lr", fmt(c.lr));
    kv("weight_decay", fmt(c.weight_decay));
    kv("stream", c.stream);
    kv("samples_per_task", std::to_string(c.samples_per_task));
    kv("max_tasks", std::to_string(c.max_tasks));
    kv("concepts", c.concepts_path);
    kv("concept_dim", std::to_string(c.concept_dim));
    kv("concept_anchor_gain", fmt(c.concept_anchor_gain));
    kv("phi_warm_start", tf(c.phi_warm_start));
    kv("tune_backbone", tf(c.tune_backbone));
    kv("bwt_form", bwt_form_name(c.bwt_form));
    kv("release_data", tf(c.release_data));
    kv("log_steps", tf(c.log_steps));
    kv("log_routing", tf(c.log_routing));
    kv("output_dir", c.output_dir);
    return o.str();
}

}  // namespace lcl
