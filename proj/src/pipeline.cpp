#include "vseg/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <utility>

#include "vseg/evalkit.hpp"
#include "vseg/mesh.hpp"
#include "vseg/postrecon.hpp"

namespace vseg {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// --- JSON plumbing ---------------------------------------------------------

json read_json_file(const fs::path& path, const std::string& what) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + what + ": " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw FormatError("malformed " + what + " " + path.string() + ": " + e.what());
    }
    return j;
}

void write_json_file(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw IoError("short write to " + path.string());
}

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << h;
    return os.str();
}

/// Strict-object reader: every key must be consumed via get()/child() or
/// finish() rejects it, so config typos fail loudly.
class StrictObject {
public:
    StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object())
            throw ConfigError(where_ + " must be a JSON object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        known_.push_back(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    void get_path(const char* key, fs::path& out) {
        std::string s = out.string();
        get(key, s);
        out = s;
    }

    /// Nested object/array, nullptr when absent.
    const json* child(const char* key) {
        known_.push_back(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            const std::string& key = item.key();
            if (std::none_of(known_.begin(), known_.end(),
                             [&](const std::string& k) { return k == key; }))
                throw ConfigError("unknown key '" + key + "' in " + where_);
        }
    }

private:
    const json& j_;
    std::string where_;
    std::vector<std::string> known_;
};

// --- Config parsing --------------------------------------------------------

void parse_model(const json& j, ModelConfig& m) {
    StrictObject o(j, "model");
    o.get("preset", m.preset);
    o.get("depth", m.depth);
    o.get("base_features", m.base_features);
    o.finish();
}

void parse_optimizer(const json& j, OptimizerConfig& oc) {
    StrictObject o(j, "optimizer");
    o.get("kind", oc.kind);
    if (const json* s = o.child("sgd")) {
        StrictObject so(*s, "optimizer.sgd");
        so.get("lr", oc.sgd.lr);
        so.get("momentum", oc.sgd.momentum);
        so.get("min_lr", oc.sgd.min_lr);
        so.get("plateau_window", oc.sgd.plateau_window);
        so.get("plateau_patience", oc.sgd.plateau_patience);
        so.get("plateau_rel_threshold", oc.sgd.plateau_rel_threshold);
        so.finish();
    }
    if (const json* a = o.child("adam")) {
        StrictObject ao(*a, "optimizer.adam");
        ao.get("lr", oc.adam.lr);
        ao.get("beta1", oc.adam.beta1);
        ao.get("beta2", oc.adam.beta2);
        ao.get("eps", oc.adam.eps);
        ao.finish();
    }
    o.finish();
}

void parse_augment(const json& j, AugmentConfig& a) {
    StrictObject o(j, "augment");
    o.get("policy", a.policy);
    o.get("gray_variants", a.gray_variants);
    o.get("a_min", a.a_min);
    o.get("a_max", a.a_max);
    o.get("b_min", a.b_min);
    o.get("b_max", a.b_max);
    o.get("window", a.window);
    o.get("stride", a.stride);
    o.finish();
}

void parse_train(const json& j, TrainConfig& t) {
    StrictObject o(j, "train");
    o.get("max_iterations", t.max_iterations);
    o.get("batch_size", t.batch_size);
    o.get("loss_log_interval", t.loss_log_interval);
    o.get("checkpoint_interval", t.checkpoint_interval);
    o.finish();
}

void parse_subject(const json& j, SubjectConfig& s, int index) {
    StrictObject o(j, "subjects[" + std::to_string(index) + "]");
    o.get("name", s.name);
    const std::string where = "subject '" + s.name + "'";
    if (const json* p = o.child("phantom")) {
        if (p->is_object() && p->contains("seed"))
            throw ConfigError(where + ": phantom seeds are derived from the master"
                              " seed; remove 'seed' from the phantom spec");
        try {
            s.phantom = phantom_spec_from_json_text(p->dump());
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    o.get_path("image", s.image);
    o.get_path("mask", s.mask);
    o.get("excluded_from_test", s.excluded_from_test);
    o.finish();
}

void parse_fold(const json& j, FoldConfig& f, int index) {
    StrictObject o(j, "folds[" + std::to_string(index) + "]");
    o.get("train", f.train);
    o.get("test", f.test);
    o.get("policy", f.policy);
    o.get("preset", f.preset);
    o.finish();
}

RunConfig run_config_from_json(const json& j, const std::string& where) {
    RunConfig cfg;
    StrictObject o(j, where);
    o.get_path("out_dir", cfg.out_dir);
    o.get_path("data_dir", cfg.data_dir);
    o.get("seed", cfg.seed);
    if (const json* c = o.child("model")) parse_model(*c, cfg.model);
    if (const json* c = o.child("optimizer")) parse_optimizer(*c, cfg.optimizer);
    if (const json* c = o.child("augment")) parse_augment(*c, cfg.augment);
    if (const json* c = o.child("train")) parse_train(*c, cfg.train);
    if (const json* c = o.child("resample")) {
        StrictObject ro(*c, "resample");
        ro.get("target_spacing_mm", cfg.resample.target_spacing_mm);
        ro.finish();
    }
    if (const json* c = o.child("normalize")) {
        StrictObject no(*c, "normalize");
        no.get("lo", cfg.normalize.lo);
        no.get("hi", cfg.normalize.hi);
        no.finish();
    }
    if (const json* c = o.child("postprocess")) {
        StrictObject po(*c, "postprocess");
        po.get("min_component_size", cfg.postprocess.min_component_size);
        po.finish();
    }
    if (const json* c = o.child("evaluate")) {
        StrictObject eo(*c, "evaluate");
        eo.get("c2m_bins", cfg.evaluate.c2m_bins);
        eo.get("icp_max_iterations", cfg.evaluate.icp_max_iterations);
        eo.get("icp_tolerance", cfg.evaluate.icp_tolerance);
        eo.finish();
    }
    if (const json* c = o.child("subjects")) {
        if (!c->is_array()) throw ConfigError("subjects must be an array");
        for (std::size_t i = 0; i < c->size(); ++i) {
            SubjectConfig s;
            parse_subject((*c)[i], s, static_cast<int>(i));
            cfg.subjects.push_back(std::move(s));
        }
    }
    o.get("train_subjects", cfg.train_subjects);
    o.get("test_subject", cfg.test_subject);
    if (const json* c = o.child("folds")) {
        if (!c->is_array()) throw ConfigError("folds must be an array");
        for (std::size_t i = 0; i < c->size(); ++i) {
            FoldConfig f;
            parse_fold((*c)[i], f, static_cast<int>(i));
            cfg.folds.push_back(std::move(f));
        }
    }
    o.finish();
    return cfg;
}

// --- Resolved-config serialization -----------------------------------------

json phantom_to_json(const PhantomSpec& s) {
    // Mirrors the phantom spec parser's keys; the seed is omitted because
    // generation always derives it from the master seed.
    return json{{"n_slices", s.n_slices},
                {"width", s.width},
                {"height", s.height},
                {"spacing_mm", {s.spacing_mm[0], s.spacing_mm[1], s.spacing_mm[2]}},
                {"base_radius", s.base_radius},
                {"bulge_amplitude", s.bulge_amplitude},
                {"bulge_center", s.bulge_center},
                {"bulge_sigma", s.bulge_sigma},
                {"background_level", s.background_level},
                {"aorta_level", s.aorta_level},
                {"noise_sd", s.noise_sd},
                {"a", s.a},
                {"b", s.b},
                {"dx", s.dx},
                {"dy", s.dy}};
}

// --- Validation helpers ----------------------------------------------------

bool safe_name(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '-';
    });
}

void require_known_subjects(const RunConfig& cfg, const std::vector<std::string>& names,
                            const std::string& what) {
    for (const auto& n : names) {
        if (std::none_of(cfg.subjects.begin(), cfg.subjects.end(),
                         [&](const SubjectConfig& s) { return s.name == n; }))
            throw ConfigError(what + " references unknown subject '" + n + "'");
    }
}

// --- Stage plumbing --------------------------------------------------------

fs::path phantom_dir(const RunConfig& cfg, const std::string& name) {
    return cfg.effective_data_dir() / "phantoms" / name;
}

fs::path resampled_dir(const RunConfig& cfg, const std::string& name) {
    return cfg.effective_data_dir() / "resampled" / name;
}

/// The prerequisite contract: a missing upstream artifact is reported with
/// the stage that produces it.
void require_artifact(const fs::path& path, const std::string& what,
                      const std::string& stage) {
    if (!fs::exists(path))
        throw PrereqError(what + " not found at " + path.string() +
                          "; run the " + stage + " stage first");
}

void write_resolved(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    json echo;
    echo["config"] = cfg.resolved();
    echo["config_hash"] = hash_hex(cfg.config_hash());
    echo["out_dir"] = cfg.out_dir.string();
    echo["data_dir"] = cfg.effective_data_dir().string();
    write_json_file(cfg.out_dir / "config.resolved.json", echo);
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

/// Wall-clock records live in their own file so metrics stay reproducible.
void record_timing(const RunConfig& cfg, const std::string& key, double s) {
    const fs::path path = cfg.out_dir / "timings.json";
    json j = json::object();
    if (fs::exists(path)) {
        try {
            j = read_json_file(path, "timings");
        } catch (const Error&) {
            j = json::object();  // stale/corrupt timings are not precious
        }
    }
    j[key + "_s"] = s;
    write_json_file(path, j);
}

// --- Sample (de)serialization for the augment -> train seam ----------------

void append_f32(std::ofstream& os, const std::vector<float>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void append_u8(std::ofstream& os, const std::vector<std::uint8_t>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size()));
}

struct AugmentedSet {
    std::vector<TrainSample> samples;
    int height = 0;  // of the first sample, for summaries
    int width = 0;
};

/// Read the augmented artifacts back and build network-ready tensors:
/// normalized image (1,1,h,w) and one-hot target (1,2,h,w).
AugmentedSet load_augmented(const RunConfig& cfg) {
    const fs::path dir = cfg.out_dir / "augmented";
    require_artifact(dir / "manifest.json", "augmented sample manifest", "augment");
    const json manifest = read_json_file(dir / "manifest.json", "augmented manifest");

    std::ifstream images(dir / "images.raw", std::ios::binary);
    std::ifstream labels(dir / "labels.raw", std::ios::binary);
    if (!images || !labels)
        throw IoError("cannot open augmented payloads in " + dir.string());

    AugmentedSet set;
    const auto& entries = manifest.at("samples");
    for (const auto& e : entries) {
        const int h = e.at("h").get<int>();
        const int w = e.at("w").get<int>();
        std::vector<float> img(static_cast<std::size_t>(h) * w);
        std::vector<std::uint8_t> lab(img.size());
        images.read(reinterpret_cast<char*>(img.data()),
                    static_cast<std::streamsize>(img.size() * sizeof(float)));
        labels.read(reinterpret_cast<char*>(lab.data()),
                    static_cast<std::streamsize>(lab.size()));
        if (!images || !labels)
            throw FormatError("augmented payloads in " + dir.string() +
                              " are shorter than the manifest describes");

        normalize_intensity(img, static_cast<float>(cfg.normalize.lo),
                            static_cast<float>(cfg.normalize.hi));
        TrainSample sample;
        sample.image = Tensor4({1, 1, h, w}, std::move(img));
        sample.onehot = Tensor4({1, 2, h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::uint8_t l = lab[static_cast<std::size_t>(y) * w + x];
                if (l > 1)
                    throw FormatError("augmented label is not binary in " + dir.string());
                sample.onehot.at(0, l, y, x) = 1.0f;
            }
        if (set.samples.empty()) {
            set.height = h;
            set.width = w;
        }
        set.samples.push_back(std::move(sample));
    }
    if (set.samples.empty())
        throw FormatError("augmented manifest in " + dir.string() + " lists no samples");
    return set;
}

// --- Prediction stack I/O --------------------------------------------------

struct ProbStack {
    Tensor4 probs;  // (slices, 2, h, w)
    std::array<double, 3> spacing_mm = {1.0, 1.0, 1.0};
    std::string subject;
};

void write_probs(const RunConfig& cfg, const ProbStack& stack) {
    const fs::path dir = cfg.out_dir / "predict" / stack.subject;
    fs::create_directories(dir);
    json meta;
    meta["subject"] = stack.subject;
    meta["slices"] = stack.probs.shape.n;
    meta["channels"] = stack.probs.shape.c;
    meta["height"] = stack.probs.shape.h;
    meta["width"] = stack.probs.shape.w;
    meta["spacing_mm"] = {stack.spacing_mm[0], stack.spacing_mm[1], stack.spacing_mm[2]};
    meta["dtype"] = "f32";
    write_json_file(dir / "meta.json", meta);

    std::ofstream os(dir / "probs.raw", std::ios::binary);
    if (!os) throw IoError("cannot write " + (dir / "probs.raw").string());
    append_f32(os, stack.probs.data);
    if (!os) throw IoError("short write to " + (dir / "probs.raw").string());
}

ProbStack read_probs(const RunConfig& cfg, const std::string& subject) {
    const fs::path dir = cfg.out_dir / "predict" / subject;
    require_artifact(dir / "meta.json", "probability stack", "predict");
    const json meta = read_json_file(dir / "meta.json", "probability metadata");

    ProbStack stack;
    stack.subject = subject;
    const int n = meta.at("slices").get<int>();
    const int c = meta.at("channels").get<int>();
    const int h = meta.at("height").get<int>();
    const int w = meta.at("width").get<int>();
    const auto sp = meta.at("spacing_mm").get<std::vector<double>>();
    if (sp.size() != 3)
        throw FormatError("probability metadata spacing_mm needs 3 entries");
    stack.spacing_mm = {sp[0], sp[1], sp[2]};

    const Shape4 shape{n, c, h, w};
    std::vector<float> data(static_cast<std::size_t>(shape.count()));
    std::ifstream is(dir / "probs.raw", std::ios::binary);
    if (!is) throw IoError("cannot open " + (dir / "probs.raw").string());
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is)
        throw FormatError("probability payload shorter than its metadata describes: " +
                          (dir / "probs.raw").string());
    stack.probs = Tensor4(shape, std::move(data));
    return stack;
}

// --- Fold orchestration helpers --------------------------------------------

std::string fold_tag(int index, const FoldConfig& f) {
    return "fold" + std::to_string(index) + "_" + f.test + "_" + f.policy + "_" +
           f.preset;
}

RunConfig fold_config(const RunConfig& base, const FoldConfig& fold, int index) {
    RunConfig f = base;
    f.out_dir = base.out_dir / "folds" / fold_tag(index, fold);
    f.data_dir = base.effective_data_dir();
    // Policy-independent fold seed: folds that differ only in augmentation
    // or preset train from identical data, initialization, and sampling
    // order, so those comparisons are like-for-like.
    f.seed = substream_seed(base.seed, "fold." + fold.test);
    f.train_subjects = fold.train;
    f.test_subject = fold.test;
    f.augment.policy = fold.policy;
    f.model.preset = fold.preset;
    f.folds.clear();
    return f;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

// --- Config methods --------------------------------------------------------

UNetSpec ModelConfig::spec() const {
    UNetSpec s;
    if (preset == "desk") {
        s.depth = 3;
        s.base_features = 8;
    } else if (preset == "u34") {
        s.depth = 5;
        s.base_features = 64;
    } else if (preset == "u28") {
        s.depth = 4;
        s.base_features = 64;
    } else if (preset == "custom") {
        s.depth = depth;
        s.base_features = base_features;
    } else {
        throw ConfigError("model.preset must be desk, u34, u28, or custom (got '" +
                          preset + "')");
    }
    return s;
}

AugPolicy AugmentConfig::resolve(std::uint64_t seed) const {
    AugPolicy p;
    if (policy == "gray_translate")
        p.kind = AugKind::GrayTranslate;
    else if (policy == "rotate_mirror")
        p.kind = AugKind::RotateMirror;
    else
        throw ConfigError("augment.policy must be gray_translate or rotate_mirror"
                          " (got '" + policy + "')");
    p.gray_variant_count = gray_variants;
    p.a_min = a_min;
    p.a_max = a_max;
    p.b_min = b_min;
    p.b_max = b_max;
    p.grid = WindowGrid{window, stride};
    p.seed = seed;
    return p;
}

const SubjectConfig& RunConfig::subject(const std::string& name) const {
    for (const auto& s : subjects)
        if (s.name == name) return s;
    throw ConfigError("unknown subject '" + name + "'");
}

void RunConfig::validate() const {
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");

    model.spec().validate();  // resolves the preset, rejects bad custom sizes

    if (optimizer.kind != "sgd" && optimizer.kind != "adam")
        throw ConfigError("optimizer.kind must be sgd or adam (got '" +
                          optimizer.kind + "')");
    if (optimizer.sgd.lr <= 0 || optimizer.adam.lr <= 0)
        throw ConfigError("learning rates must be positive");
    if (optimizer.sgd.momentum < 0 || optimizer.sgd.momentum >= 1)
        throw ConfigError("optimizer.sgd.momentum must be in [0, 1)");
    if (optimizer.sgd.min_lr <= 0)
        throw ConfigError("optimizer.sgd.min_lr must be positive");
    if (optimizer.sgd.plateau_window < 1 || optimizer.sgd.plateau_patience < 1)
        throw ConfigError("plateau window and patience must be at least 1");
    if (optimizer.sgd.plateau_rel_threshold < 0)
        throw ConfigError("optimizer.sgd.plateau_rel_threshold must be >= 0");
    if (optimizer.adam.beta1 < 0 || optimizer.adam.beta1 >= 1 ||
        optimizer.adam.beta2 < 0 || optimizer.adam.beta2 >= 1)
        throw ConfigError("adam betas must be in [0, 1)");
    if (optimizer.adam.eps <= 0) throw ConfigError("optimizer.adam.eps must be positive");

    augment.resolve(0);  // rejects unknown policies
    if (augment.gray_variants < 1)
        throw ConfigError("augment.gray_variants must be at least 1");
    if (augment.a_min > augment.a_max || augment.b_min > augment.b_max)
        throw ConfigError("augment gray ranges must satisfy min <= max");
    if (augment.window < 1 || augment.stride < 1)
        throw ConfigError("augment.window and augment.stride must be positive");

    if (train.max_iterations < 1)
        throw ConfigError("train.max_iterations must be at least 1");
    if (train.batch_size != 1)
        throw ConfigError("train.batch_size must be 1 (no gradient accumulation)");
    if (train.loss_log_interval < 1)
        throw ConfigError("train.loss_log_interval must be at least 1");
    if (train.checkpoint_interval < 0)
        throw ConfigError("train.checkpoint_interval must be >= 0");

    if (resample.target_spacing_mm <= 0)
        throw ConfigError("resample.target_spacing_mm must be positive");
    if (normalize.lo >= normalize.hi)
        throw ConfigError("normalize window must satisfy lo < hi");
    if (postprocess.min_component_size < 0)
        throw ConfigError("postprocess.min_component_size must be >= 0");
    if (evaluate.c2m_bins < 1)
        throw ConfigError("evaluate.c2m_bins must be at least 1");
    if (evaluate.icp_max_iterations < 1)
        throw ConfigError("evaluate.icp_max_iterations must be at least 1");
    if (evaluate.icp_tolerance < 0)
        throw ConfigError("evaluate.icp_tolerance must be >= 0");

    if (subjects.empty()) throw ConfigError("subjects must not be empty");
    for (const auto& s : subjects) {
        if (!safe_name(s.name))
            throw ConfigError("subject names must be non-empty and use only"
                              " letters, digits, '-' and '_' (got '" + s.name + "')");
        const int copies = static_cast<int>(
            std::count_if(subjects.begin(), subjects.end(),
                          [&](const SubjectConfig& t) { return t.name == s.name; }));
        if (copies > 1) throw ConfigError("duplicate subject name '" + s.name + "'");
        const std::string where = "subject '" + s.name + "'";
        if (s.phantom) {
            if (!s.image.empty() || !s.mask.empty())
                throw ConfigError(where + ": give either a phantom spec or"
                                  " image/mask bundles, not both");
            s.phantom->validate();
        } else {
            if (s.image.empty() || s.mask.empty())
                throw ConfigError(where + ": needs a phantom spec or both image"
                                  " and mask bundle paths");
            for (const fs::path& p : {s.image, s.mask}) {
                if (!fs::exists(p))
                    throw ConfigError(where + ": bundle not found: " + p.string());
                if (!fs::exists(p / "meta.json"))
                    throw ConfigError(where + ": not a volume bundle (missing"
                                      " meta.json): " + p.string());
            }
        }
    }

    require_known_subjects(*this, train_subjects, "train_subjects");
    if (!test_subject.empty())
        require_known_subjects(*this, {test_subject}, "test_subject");
    for (std::size_t i = 0; i < folds.size(); ++i) {
        const std::string where = "folds[" + std::to_string(i) + "]";
        require_known_subjects(*this, folds[i].train, where + ".train");
        if (!folds[i].test.empty())
            require_known_subjects(*this, {folds[i].test}, where + ".test");
    }
}

json RunConfig::resolved() const {
    json j;
    j["seed"] = seed;
    j["model"] = {{"preset", model.preset},
                  {"depth", model.depth},
                  {"base_features", model.base_features}};
    j["optimizer"] = {
        {"kind", optimizer.kind},
        {"sgd",
         {{"lr", optimizer.sgd.lr},
          {"momentum", optimizer.sgd.momentum},
          {"min_lr", optimizer.sgd.min_lr},
          {"plateau_window", optimizer.sgd.plateau_window},
          {"plateau_patience", optimizer.sgd.plateau_patience},
          {"plateau_rel_threshold", optimizer.sgd.plateau_rel_threshold}}},
        {"adam",
         {{"lr", optimizer.adam.lr},
          {"beta1", optimizer.adam.beta1},
          {"beta2", optimizer.adam.beta2},
          {"eps", optimizer.adam.eps}}}};
    j["augment"] = {{"policy", augment.policy},
                    {"gray_variants", augment.gray_variants},
                    {"a_min", augment.a_min},
                    {"a_max", augment.a_max},
                    {"b_min", augment.b_min},
                    {"b_max", augment.b_max},
                    {"window", augment.window},
                    {"stride", augment.stride}};
    j["train"] = {{"max_iterations", train.max_iterations},
                  {"batch_size", train.batch_size},
                  {"loss_log_interval", train.loss_log_interval},
                  {"checkpoint_interval", train.checkpoint_interval}};
    j["resample"] = {{"target_spacing_mm", resample.target_spacing_mm}};
    j["normalize"] = {{"lo", normalize.lo}, {"hi", normalize.hi}};
    j["postprocess"] = {{"min_component_size", postprocess.min_component_size}};
    j["evaluate"] = {{"c2m_bins", evaluate.c2m_bins},
                     {"icp_max_iterations", evaluate.icp_max_iterations},
                     {"icp_tolerance", evaluate.icp_tolerance}};

    json subj = json::array();
    for (const auto& s : subjects) {
        json e;
        e["name"] = s.name;
        e["excluded_from_test"] = s.excluded_from_test;
        if (s.phantom)
            e["phantom"] = phantom_to_json(*s.phantom);
        else {
            e["image"] = s.image.string();
            e["mask"] = s.mask.string();
        }
        subj.push_back(std::move(e));
    }
    j["subjects"] = std::move(subj);
    j["train_subjects"] = train_subjects;
    j["test_subject"] = test_subject;
    json fl = json::array();
    for (const auto& f : folds)
        fl.push_back(json{{"train", f.train},
                          {"test", f.test},
                          {"policy", f.policy},
                          {"preset", f.preset}});
    j["folds"] = std::move(fl);
    return j;
}

std::uint64_t RunConfig::config_hash() const { return fnv1a64(resolved().dump()); }

RunConfig run_config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed run config JSON: ") + e.what());
    }
    return run_config_from_json(j, "run config");
}

RunConfig run_config_from_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open run config: " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed run config JSON " + path.string() + ": " +
                          e.what());
    }
    return run_config_from_json(j, path.string());
}

// --- Experiment plan -------------------------------------------------------

ExperimentPlan make_plan(const RunConfig& cfg) {
    ExperimentPlan plan;
    if (!cfg.folds.empty()) {
        plan.folds = cfg.folds;
    } else {
        // Leave-one-out: every subject tests once, except those flagged
        // excluded_from_test, which only ever train.
        for (const auto& test : cfg.subjects) {
            if (test.excluded_from_test) continue;
            FoldConfig f;
            f.test = test.name;
            for (const auto& train : cfg.subjects)
                if (train.name != test.name) f.train.push_back(train.name);
            plan.folds.push_back(std::move(f));
        }
    }
    for (auto& f : plan.folds) {
        if (f.policy.empty()) f.policy = cfg.augment.policy;
        if (f.preset.empty()) f.preset = cfg.model.preset;
    }
    return plan;
}

void ExperimentPlan::validate(const RunConfig& cfg) const {
    if (cfg.subjects.size() < 2)
        throw ConfigError("cross-validation needs at least 2 subjects");
    if (folds.empty())
        throw ConfigError("cross-validation plan has no folds (every subject"
                          " excluded from testing?)");
    for (std::size_t i = 0; i < folds.size(); ++i) {
        const FoldConfig& f = folds[i];
        const std::string where = "fold " + std::to_string(i);
        if (f.test.empty()) throw ConfigError(where + ": test subject is empty");
        require_known_subjects(cfg, {f.test}, where + " test");
        if (f.train.empty()) throw ConfigError(where + ": train set is empty");
        require_known_subjects(cfg, f.train, where + " train");
        if (std::find(f.train.begin(), f.train.end(), f.test) != f.train.end())
            throw ConfigError(where + ": test subject '" + f.test +
                              "' is in its own train set");
        for (const auto& n : f.train)
            if (std::count(f.train.begin(), f.train.end(), n) > 1)
                throw ConfigError(where + ": duplicate train subject '" + n + "'");
    }
}

// --- Stages ----------------------------------------------------------------

void cmd_phantom(const RunConfig& cfg) {
    cfg.validate();
    write_resolved(cfg);
    Stopwatch watch;

    int generated = 0;
    for (const auto& s : cfg.subjects) {
        if (!s.phantom) continue;
        PhantomSpec spec = *s.phantom;
        spec.seed = substream_seed(cfg.seed, "phantom." + s.name);
        const Phantom ph = make_phantom(spec);
        const fs::path dir = phantom_dir(cfg, s.name);
        write_bundle(ph.image, dir / "image");
        write_bundle(ph.mask, dir / "mask");
        ++generated;
    }
    if (generated == 0)
        throw ConfigError("phantom: no subject defines a phantom spec");
    record_timing(cfg, "phantom", watch.seconds());
}

void cmd_resample(const RunConfig& cfg) {
    cfg.validate();
    write_resolved(cfg);
    Stopwatch watch;

    for (const auto& s : cfg.subjects) {
        fs::path image_in = s.image;
        fs::path mask_in = s.mask;
        if (s.phantom) {
            const fs::path dir = phantom_dir(cfg, s.name);
            require_artifact(dir / "image" / "meta.json",
                             "phantom bundle for subject '" + s.name + "'", "phantom");
            image_in = dir / "image";
            mask_in = dir / "mask";
        }
        const ImageVolume image = read_image_bundle(image_in);
        const MaskVolume mask = read_mask_bundle(mask_in);
        const double t = cfg.resample.target_spacing_mm;
        const fs::path dir = resampled_dir(cfg, s.name);
        write_bundle(resample_xy(image, t, t), dir / "image");
        write_bundle(resample_mask_xy(mask, t, t), dir / "mask");
    }
    record_timing(cfg, "resample", watch.seconds());
}

void cmd_augment(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.train_subjects.empty())
        throw ConfigError("augment: train_subjects is empty");
    write_resolved(cfg);
    Stopwatch watch;

    const std::uint64_t aug_seed = substream_seed(cfg.seed, "augment");
    const AugPolicy policy = cfg.augment.resolve(aug_seed);

    const fs::path dir = cfg.out_dir / "augmented";
    fs::create_directories(dir);
    std::ofstream images(dir / "images.raw", std::ios::binary);
    std::ofstream labels(dir / "labels.raw", std::ios::binary);
    if (!images || !labels) throw IoError("cannot write augmented payloads in " + dir.string());

    json entries = json::array();
    for (const auto& name : cfg.train_subjects) {
        const fs::path in = resampled_dir(cfg, name);
        require_artifact(in / "image" / "meta.json",
                         "resampled bundle for subject '" + name + "'", "resample");
        const ImageVolume image = read_image_bundle(in / "image");
        const MaskVolume mask = read_mask_bundle(in / "mask");
        for (const SlicePair& slice : extract_slice_pairs(image, mask, name)) {
            for (const SlicePair& sample : expand(slice, policy)) {
                append_f32(images, sample.image);
                append_u8(labels, sample.label);
                entries.push_back(json{{"subject", sample.subject},
                                       {"slice", sample.slice_index},
                                       {"descriptor", sample.descriptor},
                                       {"h", sample.h},
                                       {"w", sample.w}});
            }
        }
    }
    if (entries.empty())
        throw ConfigError("augment: the policy produced no samples (is the window"
                          " larger than the slices?)");
    if (!images || !labels) throw IoError("short write of augmented payloads in " + dir.string());
    images.close();
    labels.close();

    json manifest;
    manifest["policy"] = cfg.augment.policy;
    manifest["window"] = cfg.augment.window;
    manifest["stride"] = cfg.augment.stride;
    manifest["gray_variants"] = cfg.augment.gray_variants;
    manifest["intensities"] = "raw";  // normalization happens at tensor build
    manifest["seed"] = aug_seed;
    manifest["train_subjects"] = cfg.train_subjects;
    manifest["count"] = entries.size();
    manifest["samples"] = std::move(entries);
    write_json_file(dir / "manifest.json", manifest);

    record_timing(cfg, "augment", watch.seconds());
}

void cmd_train(const RunConfig& cfg) {
    cfg.validate();
    write_resolved(cfg);
    Stopwatch watch;

    AugmentedSet set = load_augmented(cfg);
    const UNetSpec spec = cfg.model.spec();
    const int div = 1 << spec.depth;
    for (const TrainSample& s : set.samples)
        if (s.image.shape.h % div != 0 || s.image.shape.w % div != 0)
            throw ConfigError("train: sample extent " + std::to_string(s.image.shape.w) +
                              "x" + std::to_string(s.image.shape.h) +
                              " is not divisible by 2^depth = " + std::to_string(div));

    UNetParams params = unet_build(spec, substream_seed(cfg.seed, "train.init"));

    std::unique_ptr<Optimizer> opt;
    if (cfg.optimizer.kind == "sgd") {
        SgdState st = SgdState::init(params, cfg.optimizer.sgd.lr,
                                     cfg.optimizer.sgd.momentum);
        st.min_lr = cfg.optimizer.sgd.min_lr;
        st.window = cfg.optimizer.sgd.plateau_window;
        st.patience = cfg.optimizer.sgd.plateau_patience;
        st.rel_threshold = cfg.optimizer.sgd.plateau_rel_threshold;
        opt = std::make_unique<SgdOptimizer>(std::move(st));
    } else {
        AdamState st = AdamState::init(params, cfg.optimizer.adam.lr);
        st.beta1 = cfg.optimizer.adam.beta1;
        st.beta2 = cfg.optimizer.adam.beta2;
        st.eps = cfg.optimizer.adam.eps;
        opt = std::make_unique<AdamOptimizer>(std::move(st));
    }

    TrainLoopConfig loop;
    loop.max_iterations = cfg.train.max_iterations;
    loop.batch_size = cfg.train.batch_size;
    loop.loss_log_interval = cfg.train.loss_log_interval;
    loop.checkpoint_interval = cfg.train.checkpoint_interval;
    loop.seed = substream_seed(cfg.seed, "train.loop");
    loop.validate();

    const fs::path dir = cfg.out_dir / "train";
    fs::create_directories(dir);
    const CheckpointHook hook = [&](std::int64_t iteration, const UNetParams& p) {
        unet_save(p, dir / "checkpoint.bin");  // latest always wins
        if (loop.checkpoint_interval > 0 && iteration < loop.max_iterations)
            unet_save(p, dir / ("checkpoint_" + std::to_string(iteration) + ".bin"));
    };

    const LossTrace trace = train(params, set.samples, *opt, loop, hook);

    {
        std::ofstream os(dir / "loss.csv");
        if (!os) throw IoError("cannot write " + (dir / "loss.csv").string());
        os.precision(17);
        os << "iteration,loss,lr\n";
        for (const LossSample& s : trace)
            os << s.iteration << ',' << s.loss << ',' << s.lr << '\n';
        if (!os) throw IoError("short write to " + (dir / "loss.csv").string());
    }

    json summary;
    summary["samples"] = set.samples.size();
    summary["sample_height"] = set.height;
    summary["sample_width"] = set.width;
    summary["iterations"] = loop.max_iterations;
    summary["final_loss"] = trace.empty() ? 0.0 : trace.back().loss;
    summary["final_lr"] = trace.empty() ? 0.0 : trace.back().lr;
    write_json_file(dir / "train.json", summary);

    record_timing(cfg, "train", watch.seconds());
}

void cmd_predict(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.test_subject.empty())
        throw ConfigError("predict: test_subject is empty");
    write_resolved(cfg);
    Stopwatch watch;

    const fs::path ckpt = cfg.out_dir / "train" / "checkpoint.bin";
    require_artifact(ckpt, "checkpoint", "train");
    const UNetSpec spec = cfg.model.spec();
    const UNetParams params = unet_load(ckpt, spec);

    const fs::path in = resampled_dir(cfg, cfg.test_subject);
    require_artifact(in / "image" / "meta.json",
                     "resampled bundle for subject '" + cfg.test_subject + "'",
                     "resample");
    const ImageVolume image = read_image_bundle(in / "image");

    const int div = 1 << spec.depth;
    const int ph = ((image.ny + div - 1) / div) * div;
    const int pw = ((image.nx + div - 1) / div) * div;

    ProbStack stack;
    stack.subject = cfg.test_subject;
    stack.spacing_mm = image.spacing_mm;
    stack.probs = Tensor4({image.nz, 2, image.ny, image.nx});

    for (int z = 0; z < image.nz; ++z) {
        // Right/bottom zero padding to the pooling granularity; 0 in
        // normalized space is the bottom of the intensity window (air).
        Tensor4 x({1, 1, ph, pw});
        std::vector<float> row(static_cast<std::size_t>(image.nx));
        for (int y = 0; y < image.ny; ++y) {
            for (int xi = 0; xi < image.nx; ++xi)
                row[static_cast<std::size_t>(xi)] =
                    static_cast<float>(image.at(xi, y, z));
            normalize_intensity(row, static_cast<float>(cfg.normalize.lo),
                                static_cast<float>(cfg.normalize.hi));
            for (int xi = 0; xi < image.nx; ++xi) x.at(0, 0, y, xi) = row[xi];
        }
        const Tensor4 probs = unet_predict(params, x);
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < image.ny; ++y)
                for (int xi = 0; xi < image.nx; ++xi)
                    stack.probs.at(z, c, y, xi) = probs.at(0, c, y, xi);
    }
    write_probs(cfg, stack);
    record_timing(cfg, "predict", watch.seconds());
}

void cmd_postprocess(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.test_subject.empty())
        throw ConfigError("postprocess: test_subject is empty");
    write_resolved(cfg);
    Stopwatch watch;

    const ProbStack stack = read_probs(cfg, cfg.test_subject);
    const MaskVolume raw = argmax_mask(stack.probs, stack.spacing_mm);
    const ComponentResult cleaned = largest_component(
        raw, static_cast<std::size_t>(cfg.postprocess.min_component_size));

    const fs::path dir = cfg.out_dir / "postprocess" / cfg.test_subject;
    write_bundle(cleaned.mask, dir / "mask");
    json stats;
    stats["subject"] = cfg.test_subject;
    stats["components_before"] = cleaned.components_before;
    stats["kept_voxels"] = cleaned.voxel_count;
    stats["empty"] = cleaned.empty;
    write_json_file(dir / "stats.json", stats);

    record_timing(cfg, "postprocess", watch.seconds());
}

void cmd_reconstruct(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.test_subject.empty())
        throw ConfigError("reconstruct: test_subject is empty");
    write_resolved(cfg);
    Stopwatch watch;

    const fs::path mask_dir = cfg.out_dir / "postprocess" / cfg.test_subject / "mask";
    require_artifact(mask_dir / "meta.json", "cleaned mask", "postprocess");
    const MaskVolume mask = read_mask_bundle(mask_dir);
    const Mesh mesh = marching_cubes(mask);

    const fs::path dir = cfg.out_dir / "reconstruct" / cfg.test_subject;
    fs::create_directories(dir);
    write_stl_ascii(mesh, dir / "mesh.stl", cfg.test_subject);
    write_obj(mesh, dir / "mesh.obj");
    json info;
    info["subject"] = cfg.test_subject;
    info["vertices"] = mesh.vertices.size();
    info["triangles"] = mesh.triangles.size();
    write_json_file(dir / "mesh.json", info);

    record_timing(cfg, "reconstruct", watch.seconds());
}

nlohmann::json cmd_evaluate(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.test_subject.empty())
        throw ConfigError("evaluate: test_subject is empty");
    write_resolved(cfg);
    Stopwatch watch;

    const fs::path pred_dir = cfg.out_dir / "postprocess" / cfg.test_subject / "mask";
    require_artifact(pred_dir / "meta.json", "cleaned mask", "postprocess");
    const MaskVolume pred = read_mask_bundle(pred_dir);

    const fs::path gt_dir = resampled_dir(cfg, cfg.test_subject);
    require_artifact(gt_dir / "mask" / "meta.json",
                     "resampled ground-truth mask for subject '" + cfg.test_subject +
                         "'",
                     "resample");
    const MaskVolume gt = read_mask_bundle(gt_dir / "mask");

    const DscReport dsc = dsc_volume(pred, gt);

    const fs::path mesh_path = cfg.out_dir / "reconstruct" / cfg.test_subject / "mesh.obj";
    require_artifact(mesh_path, "reconstructed surface", "reconstruct");
    const Mesh pred_mesh = read_obj(mesh_path);
    const Mesh gt_mesh = marching_cubes(gt);

    json surface;
    if (pred_mesh.empty() || gt_mesh.empty()) {
        surface["skipped"] = pred_mesh.empty()
                                 ? "reconstructed surface has no triangles"
                                 : "ground-truth surface has no triangles";
    } else {
        const PointCloud cloud(pred_mesh.vertices.begin(), pred_mesh.vertices.end());
        try {
            const IcpResult icp =
                icp_align(cloud, gt_mesh, cfg.evaluate.icp_max_iterations,
                          cfg.evaluate.icp_tolerance);
            const C2mReport c2m =
                c2m_distances(cloud, gt_mesh, icp.transform, cfg.evaluate.c2m_bins);
            surface["icp"] = {{"iterations", icp.iterations},
                              {"final_rms_mm", icp.final_rms},
                              {"transform", to_json(icp.transform)}};
            surface["c2m"] = to_json(c2m);
        } catch (const DegeneracyError& e) {
            surface["skipped"] = std::string("degenerate geometry: ") + e.what();
        }
    }

    json manifest;
    manifest["subject"] = cfg.test_subject;
    manifest["seed"] = cfg.seed;
    manifest["config_hash"] = hash_hex(cfg.config_hash());
    manifest["dsc"] = to_json(dsc);
    manifest["surface"] = std::move(surface);
    write_json_file(cfg.out_dir / "metrics.json", manifest);

    record_timing(cfg, "evaluate", watch.seconds());
    return manifest;
}

nlohmann::json cmd_crossval(const RunConfig& cfg) {
    cfg.validate();
    const ExperimentPlan plan = make_plan(cfg);
    plan.validate(cfg);
    write_resolved(cfg);
    Stopwatch watch;

    if (std::any_of(cfg.subjects.begin(), cfg.subjects.end(),
                    [](const SubjectConfig& s) { return s.phantom.has_value(); }))
        cmd_phantom(cfg);
    cmd_resample(cfg);

    json rows = json::array();
    std::vector<double> fold_means;
    std::vector<double> pooled_slices;
    std::vector<std::array<std::string, 6>> cells;
    cells.push_back({"fold", "train", "test", "policy", "preset", "dsc"});
    for (std::size_t i = 0; i < plan.folds.size(); ++i) {
        const FoldConfig& fold = plan.folds[i];
        const RunConfig fcfg = fold_config(cfg, fold, static_cast<int>(i));
        cmd_augment(fcfg);
        cmd_train(fcfg);
        cmd_predict(fcfg);
        cmd_postprocess(fcfg);
        cmd_reconstruct(fcfg);
        const json metrics = cmd_evaluate(fcfg);

        const double mean = metrics.at("dsc").at("mean").get<double>();
        const double sd = metrics.at("dsc").at("std").get<double>();
        fold_means.push_back(mean);
        for (const auto& d : metrics.at("dsc").at("per_slice"))
            pooled_slices.push_back(d.get<double>());

        json row;
        row["fold"] = i;
        row["train"] = fold.train;
        row["test"] = fold.test;
        row["policy"] = fold.policy;
        row["preset"] = fold.preset;
        row["tag"] = fold_tag(static_cast<int>(i), fold);
        row["config_hash"] = metrics.at("config_hash");
        row["dsc"] = metrics.at("dsc");
        row["surface"] = metrics.at("surface");
        rows.push_back(std::move(row));

        std::string train_list;
        for (const auto& t : fold.train)
            train_list += (train_list.empty() ? "" : ",") + t;
        std::ostringstream dsc_cell;
        dsc_cell << std::fixed << std::setprecision(3) << mean << " +/- " << sd;
        cells.push_back({std::to_string(i), train_list, fold.test, fold.policy,
                         fold.preset, dsc_cell.str()});
    }

    std::array<std::size_t, 6> widths{};
    for (const auto& row_cells : cells)
        for (std::size_t c = 0; c < widths.size(); ++c)
            widths[c] = std::max(widths[c], row_cells[c].size());
    std::ostringstream table;
    for (const auto& row_cells : cells) {
        for (std::size_t c = 0; c < widths.size(); ++c) {
            if (c + 1 < widths.size())
                table << std::left << std::setw(static_cast<int>(widths[c]))
                      << row_cells[c] << "  ";
            else
                table << row_cells[c] << "\n";
        }
    }

    json summary;
    summary["folds"] = plan.folds.size();
    // Both std groupings: across every test slice pooled over folds, and
    // across the per-fold means.
    summary["dsc_mean_of_folds"] = mean_of(fold_means);
    summary["dsc_std_across_folds"] = population_std(fold_means);
    summary["dsc_mean_pooled_slices"] = mean_of(pooled_slices);
    summary["dsc_std_pooled_slices"] = population_std(pooled_slices);
    summary["pooled_slice_count"] = pooled_slices.size();

    json manifest;
    manifest["seed"] = cfg.seed;
    manifest["config_hash"] = hash_hex(cfg.config_hash());
    manifest["folds"] = std::move(rows);
    manifest["summary"] = summary;
    write_json_file(cfg.out_dir / "metrics.json", manifest);

    table << "pooled slices: " << std::fixed << std::setprecision(3)
          << summary["dsc_mean_pooled_slices"].get<double>() << " +/- "
          << summary["dsc_std_pooled_slices"].get<double>() << " (n="
          << pooled_slices.size() << ")\n";
    {
        const fs::path path = cfg.out_dir / "summary.txt";
        std::ofstream os(path);
        if (!os) throw IoError("cannot write " + path.string());
        os << table.str();
    }

    record_timing(cfg, "crossval", watch.seconds());
    return manifest;
}

GradCheckReport cmd_gradcheck(const fs::path& report_path) {
    const GradCheckReport report = run_gradchecks(standard_gradcheck_cases());
    if (!report_path.empty()) {
        json j;
        j["all_passed"] = report.all_passed();
        json results = json::array();
        for (const GradCheckResult& r : report.results)
            results.push_back(json{{"name", r.name},
                                   {"max_rel_err", r.max_rel_err},
                                   {"tolerance", r.tolerance},
                                   {"passed", r.passed}});
        j["results"] = std::move(results);
        write_json_file(report_path, j);
    }
    return report;
}

}  // namespace vseg
