#include "calm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "calm/errors.hpp"
#include "calm/io.hpp"

namespace calm {

namespace fs = std::filesystem;

namespace {

const char* const kPresets[] = {"train", "clean", "other", "noise_eval", "noise_tune"};
const char* const kTunes[] = {"base", "calm", "contrast"};
// Corpus fields the experiment fills in from the model and signature_seed.
const char* const kDerivedCorpusKeys[] = {"signature_seed", "n_features", "n_content",
                                          "max_tgt_len"};

bool is_derived_corpus_key(const std::string& key) {
    for (const char* k : kDerivedCorpusKeys)
        if (key == k) return true;
    return false;
}

std::map<std::string, std::string> to_map(const KeyValues& kv) {
    return {kv.begin(), kv.end()};
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

KeyValues corpus_kv(const CorpusSpec& spec) {
    KeyValues out;
    for (auto& [k, v] : spec.to_kv())
        if (!is_derived_corpus_key(k)) out.emplace_back(k, v);
    return out;
}

template <typename Config>
auto& preset_ref(Config& c, const std::string& name) {
    if (name == "train") return c.train;
    if (name == "clean") return c.clean;
    if (name == "other") return c.other;
    if (name == "noise_eval") return c.noise_eval;
    if (name == "noise_tune") return c.noise_tune;
    throw ConfigError("unknown corpus preset '" + name + "'");
}

template <typename Config>
auto& tune_ref(Config& c, const std::string& name) {
    if (name == "base") return c.base;
    if (name == "calm") return c.calm;
    if (name == "contrast") return c.contrast;
    throw ConfigError("unknown tune preset '" + name + "'");
}

template <std::size_t N>
bool one_of(const char* const (&names)[N], const std::string& s) {
    return std::find(std::begin(names), std::end(names), s) != std::end(names);
}

std::string heads_text(const std::set<int>& heads) {
    return join_ints(std::vector<int>(heads.begin(), heads.end()), ',');
}

std::set<int> parse_heads(const std::string& key, const std::string& text) {
    const auto list = parse_int_list(key, text);
    return {list.begin(), list.end()};
}

std::string combos_text(const std::vector<std::set<int>>& combos) {
    std::string out;
    for (std::size_t i = 0; i < combos.size(); ++i) {
        if (i) out += ';';
        out += heads_text(combos[i]);
    }
    return out;
}

std::vector<std::set<int>> parse_combos(const std::string& text) {
    std::vector<std::set<int>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';')) {
        std::set<int> c = parse_heads("combos", item);
        if (!c.empty()) out.push_back(std::move(c));
    }
    if (out.empty()) throw ConfigError("combos: no head sets in '" + text + "'");
    return out;
}

void make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::string absolute_path(const std::string& path) {
    return fs::absolute(path).lexically_normal().string();
}

// Refuse to write over the checkpoint a command reads.
void guard_output(const std::string& output, const std::string& input) {
    if (input.empty()) return;
    std::error_code ec;
    if (fs::exists(output, ec) && fs::equivalent(output, input, ec))
        throw IoError("refusing to overwrite input checkpoint " + input);
}

ModelParams load_input(const std::string& path) {
    if (path.empty()) throw ConfigError("a checkpoint path is required");
    if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
    return load_checkpoint(path);
}

void save_output(const std::string& dir, const std::string& name, const ModelParams& p,
                 const std::string& input) {
    const std::string path = join_path(dir, name);
    guard_output(path, input);
    save_checkpoint(path, p);
}

Provenance base_provenance(const ExperimentConfig& cfg, const std::string& command) {
    Provenance p;
    p.command = command;
    p.config = cfg.to_kv();
    return p;
}

void write_eval_files(const std::string& dir, const std::string& label, const EvalReport& e) {
    write_text_file(join_path(dir, "eval.csv"),
                    "label," + eval_csv_header() + "\n" + label + "," + eval_csv_row(e) + "\n");
    write_text_file(join_path(dir, "frequency.csv"), frequency_table_csv(e));
}

std::string ranking_csv(const SweepReport& single, const std::vector<int>& ranking) {
    std::ostringstream out;
    out << "rank,head,masked_hallucination_rate\n";
    for (std::size_t i = 0; i < ranking.size(); ++i)
        out << i + 1 << ',' << ranking[i] << ','
            << format_real(single.rows[static_cast<std::size_t>(ranking[i]) + 1].eval.hallucination_rate)
            << '\n';
    return out.str();
}

// Splits one CSV line; double-quoted fields may contain commas.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') quoted = !quoted;
        else if (ch == ',' && !quoted) out.emplace_back();
        else out.back() += ch;
    }
    return out;
}

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(read_text_file(path));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(split_csv(line));
    return rows;
}

std::string arg_or(const std::map<std::string, std::string>& args, const std::string& key,
                   const std::string& fallback = "") {
    auto it = args.find(key);
    return it == args.end() ? fallback : it->second;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// ---------------------------------------------------------------- config

ExperimentConfig::ExperimentConfig() {
    train.seed = 11;
    train.n_speech = 4000;
    train.n_noise = 100;
    train.mislabel_fraction = 0.8;
    clean.seed = 12;
    clean.n_speech = 500;
    noise_eval.seed = 13;
    noise_eval.n_noise = 500;
    other.seed = 14;
    other.n_speech = 500;
    other.sigma = 0.4;
    noise_tune.seed = 15;
    noise_tune.n_noise = 1000;

    base.trainable = Trainable::all;
    base.epochs = 16;
    base.learning_rate = 1e-3;
    base.seed = 23;
    calm.trainable = Trainable::head_set;
    calm.epochs = 1;
    calm.learning_rate = 5e-5;
    calm.seed = 22;
    contrast = calm;
    contrast.trainable = Trainable::decoder_only;
    contrast.epochs = 3;
}

void ExperimentConfig::apply(const std::map<std::string, std::string>& kv) {
    std::map<std::string, std::map<std::string, std::string>> groups;
    for (const auto& [key, value] : kv) {
        if (key == "signature_seed") signature_seed = parse_u64(key, value);
        else if (key == "out_dir") out_dir = value;
        else if (key == "model.seed") model_seed = parse_u64(key, value);
        else if (key == "sweep.max_epochs") sweep_max_epochs = parse_int(key, value);
        else if (key == "sweep.wer_budget") sweep_wer_budget = parse_real(key, value);
        else if (key == "ablate.exhaustive") ablate_exhaustive = parse_bool(key, value);
        else if (key == "ablate.max_subset") ablate_max_subset = parse_int(key, value);
        else if (key == "eval.max_len") eval_max_len = parse_int(key, value);
        else if (key == "eval.top_k") eval_top_k = parse_int(key, value);
        else {
            const auto dot = key.find('.');
            if (dot == std::string::npos) throw ConfigError("unknown config key '" + key + "'");
            const std::string group = key.substr(0, dot), field = key.substr(dot + 1);
            const bool preset = one_of(kPresets, group);
            if (!(group == "model" || preset || one_of(kTunes, group)) ||
                (preset && is_derived_corpus_key(field)))
                throw ConfigError("unknown config key '" + key + "'");
            groups[group][field] = value;
        }
    }
    for (auto& [group, fields] : groups) {
        try {
            if (group == "model") {
                auto merged = to_map(model.to_kv());
                for (auto& [k, v] : fields) merged[k] = v;
                model = ModelConfig::from_kv(merged);
            } else if (one_of(kTunes, group)) {
                TuneConfig& t = tune_ref(*this, group);
                auto merged = to_map(t.to_kv());
                for (auto& [k, v] : fields) merged[k] = v;
                t = TuneConfig::from_kv(merged);
            } else {
                CorpusSpec& c = preset_ref(*this, group);
                auto merged = to_map(c.to_kv());
                for (auto& [k, v] : fields) merged[k] = v;
                c = CorpusSpec::from_kv(merged);
            }
        } catch (const ConfigError& e) {
            throw ConfigError(group + ": " + e.what());
        }
    }
}

KeyValues ExperimentConfig::to_kv() const {
    KeyValues out;
    for (auto& [k, v] : model.to_kv()) out.emplace_back("model." + k, v);
    out.emplace_back("model.seed", std::to_string(model_seed));
    out.emplace_back("signature_seed", std::to_string(signature_seed));
    for (const char* p : kPresets)
        for (auto& [k, v] : corpus_kv(preset_ref(*this, p)))
            out.emplace_back(std::string(p) + "." + k, v);
    for (const char* t : kTunes)
        for (auto& [k, v] : tune_ref(*this, t).to_kv())
            out.emplace_back(std::string(t) + "." + k, v);
    out.emplace_back("sweep.max_epochs", std::to_string(sweep_max_epochs));
    out.emplace_back("sweep.wer_budget", format_real(sweep_wer_budget));
    out.emplace_back("ablate.exhaustive", ablate_exhaustive ? "true" : "false");
    out.emplace_back("ablate.max_subset", std::to_string(ablate_max_subset));
    out.emplace_back("eval.max_len", std::to_string(eval_max_len));
    out.emplace_back("eval.top_k", std::to_string(eval_top_k));
    out.emplace_back("out_dir", out_dir);
    return out;
}

void ExperimentConfig::validate() const {
    model.validate();
    for (const char* p : kPresets) {
        try {
            corpus(p).validate();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(p) + ": " + e.what());
        }
    }
    for (const char* t : kTunes) {
        TuneConfig c = tune_ref(*this, t);
        if (c.trainable == Trainable::head_set && c.heads.empty()) c.heads = {0};
        try {
            c.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(t) + ": " + e.what());
        }
    }
    if (sweep_max_epochs < 1) throw ConfigError("sweep.max_epochs must be >= 1");
    if (sweep_wer_budget < 0.0) throw ConfigError("sweep.wer_budget must be >= 0");
    if (ablate_max_subset < 1 || ablate_max_subset > 4)
        throw ConfigError("ablate.max_subset must be in [1, 4]");
    if (eval_max_len < 1) throw ConfigError("eval.max_len must be >= 1");
    if (eval_top_k < 1) throw ConfigError("eval.top_k must be >= 1");
}

CorpusSpec ExperimentConfig::corpus(const std::string& preset) const {
    CorpusSpec c = preset_ref(*this, preset);
    c.signature_seed = signature_seed;
    c.n_features = model.n_features;
    c.n_content = model.n_content();
    c.max_tgt_len = model.max_tgt_len;
    return c;
}

EvalSuite ExperimentConfig::eval_suite() const {
    return {build_corpus(corpus("noise_eval")), build_corpus(corpus("clean")),
            build_corpus(corpus("other"))};
}

EvalOptions ExperimentConfig::eval_options() const {
    EvalOptions o;
    o.max_len = eval_max_len;
    o.top_k = static_cast<std::size_t>(eval_top_k);
    return o;
}

std::string ExperimentConfig::resolve(const std::string& path) const {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base_dir) / path).lexically_normal().string();
}

ExperimentConfig ExperimentConfig::load(const std::string& path,
                                        const std::map<std::string, std::string>& overrides) {
    ExperimentConfig cfg;
    if (!path.empty()) {
        if (!fs::exists(path)) throw IoError("config file not found: " + path);
        cfg.base_dir = fs::absolute(path).parent_path().string();
        cfg.apply(read_key_value_file(path));
    }
    cfg.apply(overrides);
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------- provenance

std::string Provenance::to_text() const {
    std::ostringstream out;
    out << "format=calm-provenance-1\n";
    out << "tool_version=" << kToolVersion << '\n';
    out << "command=" << command << '\n';
    for (const auto& [k, v] : args) out << "arg." << k << '=' << v << '\n';
    for (const auto& [k, v] : facts) out << "fact." << k << '=' << v << '\n';
    for (const auto& [k, v] : config) out << "config." << k << '=' << v << '\n';
    return out.str();
}

Provenance Provenance::parse(const std::string& text) {
    std::istringstream in(text);
    const auto kv = parse_key_values(in, "provenance");
    auto fmt = kv.find("format");
    if (fmt == kv.end() || fmt->second != "calm-provenance-1")
        throw IoError("not a provenance file (missing format=calm-provenance-1)");
    Provenance p;
    for (const auto& [k, v] : kv) {
        if (k == "command") p.command = v;
        else if (k.rfind("arg.", 0) == 0) p.args[k.substr(4)] = v;
        else if (k.rfind("fact.", 0) == 0) p.facts[k.substr(5)] = v;
        else if (k.rfind("config.", 0) == 0) p.config.emplace_back(k.substr(7), v);
    }
    if (p.command.empty()) throw IoError("provenance file has no command");
    return p;
}

void write_provenance(const std::string& dir, const Provenance& p) {
    write_text_file(join_path(dir, "provenance.txt"), p.to_text());
}

Provenance read_provenance(const std::string& path) {
    if (!fs::exists(path)) throw IoError("provenance file not found: " + path);
    return Provenance::parse(read_text_file(path));
}

// ---------------------------------------------------------------- commands

void cmd_gen_data(const ExperimentConfig& cfg, const std::string& out, bool features) {
    make_dir(out);
    Provenance prov = base_provenance(cfg, "gen-data");
    if (features) prov.args["features"] = "true";
    for (const char* p : kPresets) {
        const Corpus corpus = build_corpus(cfg.corpus(p));
        write_corpus_csv(join_path(out, std::string(p) + ".csv"), corpus);
        if (features) write_feature_sidecar(join_path(out, std::string(p) + ".features"), corpus);
    }
    write_provenance(out, prov);
}

ModelParams cmd_train_base(const ExperimentConfig& cfg, const std::string& out) {
    make_dir(out);
    const ModelParams init = init_model(cfg.model, cfg.model_seed);
    const TrainResult r = train(init, build_corpus(cfg.corpus("train")), cfg.base);
    save_output(out, "base.ckpt", r.params, "");
    write_text_file(join_path(out, "loss.csv"), loss_trace_csv(r.trace));
    Provenance prov = base_provenance(cfg, "train-base");
    prov.facts["output_checkpoint_id"] = checkpoint_id(r.params);
    write_provenance(out, prov);
    return r.params;
}

EvalReport cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
                    const HeadMask& mask, const std::string& label, const std::string& out) {
    const ModelParams p = load_input(checkpoint);
    mask.validate(p.config());
    make_dir(out);
    const EvalReport e = evaluate(p, mask, cfg.eval_suite(), cfg.eval_options());
    write_eval_files(out, label, e);
    Provenance prov = base_provenance(cfg, "eval");
    prov.args["checkpoint"] = absolute_path(checkpoint);
    prov.args["mask"] = mask.empty() ? "" : mask.describe();
    prov.args["label"] = label;
    prov.facts["input_checkpoint_id"] = checkpoint_id(p);
    write_provenance(out, prov);
    return e;
}

SweepReport cmd_ablate(const ExperimentConfig& cfg, const std::string& checkpoint,
                       AblateMode mode, const std::optional<std::vector<int>>& ranking,
                       const std::optional<std::vector<std::set<int>>>& combos,
                       const std::string& out) {
    const ModelParams p = load_input(checkpoint);
    const EvalSuite suite = cfg.eval_suite();
    const EvalOptions opts = cfg.eval_options();
    make_dir(out);
    Provenance prov = base_provenance(cfg, "ablate");
    prov.args["checkpoint"] = absolute_path(checkpoint);
    prov.args["mode"] = mode == AblateMode::single ? "single" : "multi";
    prov.facts["input_checkpoint_id"] = checkpoint_id(p);

    SweepReport report;
    if (mode == AblateMode::single) {
        report = single_head_sweep(p, suite, opts);
        const std::vector<int> rank = rank_heads(report);
        write_text_file(join_path(out, "classes.csv"), classes_csv(report));
        write_text_file(join_path(out, "ranking.csv"), ranking_csv(report, rank));
        prov.facts["ranking"] = join_ints(rank, ',');
    } else {
        std::vector<std::set<int>> sets;
        if (combos) {
            sets = *combos;
            prov.args["combos"] = combos_text(sets);
        } else {
            std::vector<int> rank;
            if (ranking) {
                rank = *ranking;
                prov.args["ranking"] = join_ints(rank, ',');
            } else {
                rank = rank_heads(single_head_sweep(p, suite, opts));
            }
            for (int h : rank)
                if (h < 0 || h >= p.config().n_heads)
                    throw HeadIndexError("head index " + std::to_string(h) + " out of range [0," +
                                         std::to_string(p.config().n_heads) + ")");
            sets = cfg.ablate_exhaustive
                       ? exhaustive_combos(rank, static_cast<std::size_t>(cfg.ablate_max_subset))
                       : default_combos(rank);
            prov.facts["combos"] = combos_text(sets);
        }
        for (const auto& s : sets) HeadMask::broadcast(s).validate(p.config());
        report = multi_head_sweep(p, suite, sets, opts);
    }
    write_text_file(join_path(out, "sweep.csv"), sweep_csv(report));
    write_provenance(out, prov);
    return report;
}

TuneOutcome cmd_calm_tune(const ExperimentConfig& cfg, const std::string& checkpoint,
                          const TuneConfig& tune, const std::string& label,
                          const std::string& out) {
    const ModelParams p = load_input(checkpoint);
    const Corpus corpus = build_corpus(cfg.corpus("noise_tune"));
    TuneOutcome o;
    o.result = tune.trainable == Trainable::head_set
                   ? calm_tune(p, corpus, tune.heads, tune.epochs, tune)
                   : train(p, corpus, tune);
    make_dir(out);
    const std::string input = absolute_path(checkpoint);
    for (std::size_t e = 0; e < o.result.epoch_checkpoints.size(); ++e)
        save_output(out, "epoch_" + std::to_string(e + 1) + ".ckpt", o.result.epoch_checkpoints[e],
                    input);
    save_output(out, "tuned.ckpt", o.result.params, input);
    write_text_file(join_path(out, "loss.csv"), loss_trace_csv(o.result.trace));
    o.eval = evaluate(o.result.params, HeadMask::none(), cfg.eval_suite(), cfg.eval_options());
    write_eval_files(out, label, o.eval);

    Provenance prov = base_provenance(cfg, "calm-tune");
    prov.args["checkpoint"] = input;
    prov.args["trainable"] = to_string(tune.trainable);
    if (tune.trainable == Trainable::head_set) prov.args["heads"] = heads_text(tune.heads);
    prov.args["epochs"] = std::to_string(tune.epochs);
    prov.args["label"] = label;
    prov.facts["input_checkpoint_id"] = checkpoint_id(p);
    prov.facts["output_checkpoint_id"] = checkpoint_id(o.result.params);
    write_provenance(out, prov);
    return o;
}

SweepOutcome cmd_sweep_epochs(const ExperimentConfig& cfg, const std::string& checkpoint,
                              const std::set<int>& heads, int max_epochs, bool svg,
                              const std::string& out) {
    const ModelParams p = load_input(checkpoint);
    HeadMask::broadcast(heads).validate(p.config());
    SweepOutcome o;
    o.sweep = epoch_sweep(p, build_corpus(cfg.corpus("noise_tune")), heads, max_epochs,
                          cfg.eval_suite(), cfg.calm, cfg.eval_options());
    o.selected_epoch = select_epoch(o.sweep.rows, cfg.sweep_wer_budget);
    make_dir(out);
    write_text_file(join_path(out, "curve.csv"), curve_csv(o.sweep.rows));
    write_text_file(join_path(out, "loss.csv"), loss_trace_csv(o.sweep.tuning.trace));
    write_text_file(join_path(out, "selection.csv"),
                    "selected_epoch,wer_budget\n" + std::to_string(o.selected_epoch) + "," +
                        format_real(cfg.sweep_wer_budget) + "\n");
    if (svg) write_text_file(join_path(out, "curve.svg"), curve_svg(o.sweep.rows));

    Provenance prov = base_provenance(cfg, "sweep-epochs");
    prov.args["checkpoint"] = absolute_path(checkpoint);
    prov.args["heads"] = heads_text(heads);
    prov.args["max_epochs"] = std::to_string(max_epochs);
    prov.args["svg"] = svg ? "true" : "false";
    prov.facts["input_checkpoint_id"] = checkpoint_id(p);
    prov.facts["selected_epoch"] = std::to_string(o.selected_epoch);
    write_provenance(out, prov);
    return o;
}

std::string cmd_report(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("report directory not found: " + dir);
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory() && fs::exists(entry.path() / "provenance.txt"))
            subdirs.push_back(entry.path());
    std::sort(subdirs.begin(), subdirs.end());

    struct Row {
        std::string name, rate, wer_clean, wer_other;
    };
    std::vector<Row> rows;
    for (const fs::path& sub : subdirs) {
        const Provenance prov = read_provenance((sub / "provenance.txt").string());
        if (prov.command == "eval" || prov.command == "calm-tune") {
            for (const auto& r : read_csv_rows((sub / "eval.csv").string()))
                if (r.size() >= 4) rows.push_back({r[0], r[1], r[2], r[3]});
        } else if (prov.command == "ablate") {
            for (const auto& r : read_csv_rows((sub / "sweep.csv").string()))
                if (r.size() >= 4 && r[0] != "none") rows.push_back({"mask " + r[0], r[1], r[2], r[3]});
        }
    }
    if (rows.empty()) throw IoError("no eval, ablate or calm-tune outputs under " + dir);

    std::ostringstream csv, txt;
    csv << "model_or_mask,hallucination_rate,wer_clean,wer_other\n";
    std::size_t width = 13;
    for (const Row& r : rows) width = std::max(width, r.name.size());
    char line[256];
    std::snprintf(line, sizeof line, "%-*s  %18s  %9s  %9s\n", static_cast<int>(width),
                  "model_or_mask", "hallucination_rate", "wer_clean", "wer_other");
    txt << line;
    for (const Row& r : rows) {
        csv << '"' << r.name << "\"," << r.rate << ',' << r.wer_clean << ',' << r.wer_other << '\n';
        std::snprintf(line, sizeof line, "%-*s  %18.4f  %9.4f  %9.4f\n", static_cast<int>(width),
                      r.name.c_str(), parse_real("rate", r.rate), parse_real("wer", r.wer_clean),
                      parse_real("wer", r.wer_other));
        txt << line;
    }
    write_text_file(join_path(dir, "summary.csv"), csv.str());
    write_text_file(join_path(dir, "summary.txt"), txt.str());
    return txt.str();
}

std::set<int> top_heads(const SweepReport& single, std::size_t n) {
    std::vector<int> order = rank_heads(single);
    std::vector<std::pair<double, int>> rest;
    for (std::size_t h = 0; h < single.classes.size(); ++h)
        if (std::find(order.begin(), order.end(), static_cast<int>(h)) == order.end())
            rest.emplace_back(single.rows[h + 1].eval.hallucination_rate, static_cast<int>(h));
    std::sort(rest.begin(), rest.end());
    for (auto [rate, h] : rest) order.push_back(h);
    order.resize(std::min(n, order.size()));
    return {order.begin(), order.end()};
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::string& out, bool verbose) {
    const auto t_start = std::chrono::steady_clock::now();
    auto t0 = t_start;
    auto log = [&](const char* step) {
        if (verbose) std::fprintf(stderr, "[pipeline] %-16s %7.1fs\n", step, elapsed(t0));
        t0 = std::chrono::steady_clock::now();
    };
    make_dir(out);
    PipelineResult r;
    auto dir = [&](const char* name) { return join_path(out, name); };

    cmd_gen_data(cfg, dir("01-gen-data"));
    log("gen-data");
    cmd_train_base(cfg, dir("02-train-base"));
    const std::string base = join_path(dir("02-train-base"), "base.ckpt");
    log("train-base");
    r.base = cmd_eval(cfg, base, HeadMask::none(), "base", dir("03-eval-base"));
    log("eval");
    r.single = cmd_ablate(cfg, base, AblateMode::single, std::nullopt, std::nullopt,
                          dir("04-ablate-single"));
    r.ranking = rank_heads(r.single);
    r.top3 = top_heads(r.single, 3);
    log("ablate single");
    r.multi = cmd_ablate(cfg, base, AblateMode::multi, r.ranking, std::nullopt,
                         dir("05-ablate-multi"));
    log("ablate multi");
    r.top3_masked = cmd_eval(cfg, base, HeadMask::broadcast(r.top3), "mask-top3",
                             dir("06-eval-mask-top3"));
    log("eval top-3 mask");
    r.sweep = cmd_sweep_epochs(cfg, base, r.top3, cfg.sweep_max_epochs, true,
                               dir("07-sweep-epochs"));
    r.calm_epochs = r.sweep.selected_epoch;
    log("sweep-epochs");
    TuneConfig calm = cfg.calm;
    calm.trainable = Trainable::head_set;
    calm.heads = r.top3;
    calm.epochs = r.calm_epochs;
    r.calm = cmd_calm_tune(cfg, base, calm,
                           "calm-top3-" + std::to_string(r.calm_epochs) + "epochs",
                           dir("08-calm-tune"));
    log("calm-tune");
    r.contrast = cmd_calm_tune(cfg, base, cfg.contrast,
                               "ft-" + std::string(to_string(cfg.contrast.trainable)) + "-" +
                                   std::to_string(cfg.contrast.epochs) + "epochs",
                               dir("09-contrast"));
    log("contrast");
    const std::string table = cmd_report(out);
    log("report");
    if (verbose) std::fprintf(stderr, "%s", table.c_str());

    Provenance prov = base_provenance(cfg, "pipeline");
    prov.facts["top3"] = heads_text(r.top3);
    prov.facts["calm_epochs"] = std::to_string(r.calm_epochs);
    write_provenance(out, prov);
    r.seconds = elapsed(t_start);
    return r;
}

void run_command(const std::string& command, const std::map<std::string, std::string>& args,
                 const ExperimentConfig& cfg, const std::string& out) {
    const std::string checkpoint = arg_or(args, "checkpoint");
    if (command == "gen-data") {
        cmd_gen_data(cfg, out, parse_bool("features", arg_or(args, "features", "false")));
    } else if (command == "train-base") {
        cmd_train_base(cfg, out);
    } else if (command == "eval") {
        cmd_eval(cfg, checkpoint, HeadMask::parse(arg_or(args, "mask")),
                 arg_or(args, "label", "eval"), out);
    } else if (command == "ablate") {
        const std::string mode = arg_or(args, "mode", "single");
        if (mode != "single" && mode != "multi")
            throw ConfigError("ablate --mode must be single or multi, got '" + mode + "'");
        std::optional<std::vector<int>> ranking;
        std::optional<std::vector<std::set<int>>> combos;
        if (args.count("ranking")) ranking = parse_int_list("ranking", args.at("ranking"));
        if (args.count("combos")) combos = parse_combos(args.at("combos"));
        cmd_ablate(cfg, checkpoint, mode == "single" ? AblateMode::single : AblateMode::multi,
                   ranking, combos, out);
    } else if (command == "calm-tune") {
        const Trainable mode = parse_trainable(arg_or(args, "trainable", "head-set"));
        // Whole-model modes take their hyperparameters from the contrast preset.
        TuneConfig tune = mode == Trainable::head_set ? cfg.calm : cfg.contrast;
        tune.trainable = mode;
        if (args.count("heads")) tune.heads = parse_heads("heads", args.at("heads"));
        if (args.count("epochs")) tune.epochs = parse_int("epochs", args.at("epochs"));
        tune.validate();
        cmd_calm_tune(cfg, checkpoint, tune, arg_or(args, "label", "calm-tuned"), out);
    } else if (command == "sweep-epochs") {
        const std::set<int> heads = parse_heads("heads", arg_or(args, "heads"));
        if (heads.empty()) throw ConfigError("sweep-epochs needs --heads");
        const int max_epochs = args.count("max_epochs")
                                   ? parse_int("max_epochs", args.at("max_epochs"))
                                   : cfg.sweep_max_epochs;
        cmd_sweep_epochs(cfg, checkpoint, heads, max_epochs,
                         parse_bool("svg", arg_or(args, "svg", "true")), out);
    } else if (command == "report") {
        std::cout << cmd_report(arg_or(args, "dir", out));
    } else if (command == "pipeline") {
        run_pipeline(cfg, out, parse_bool("verbose", arg_or(args, "verbose", "false")));
    } else {
        throw ConfigError("unknown command '" + command + "'");
    }
}

void replay(const std::string& provenance_path, const std::string& out) {
    const Provenance prov = read_provenance(provenance_path);
    ExperimentConfig cfg;
    cfg.base_dir = fs::absolute(provenance_path).parent_path().string();
    cfg.apply(to_map(prov.config));
    cfg.validate();
    auto id = prov.facts.find("input_checkpoint_id");
    if (id != prov.facts.end()) {
        const ModelParams p = load_input(arg_or(prov.args, "checkpoint"));
        if (checkpoint_id(p) != id->second)
            throw IoError("checkpoint " + prov.args.at("checkpoint") +
                          " changed since the provenance file was written");
    }
    run_command(prov.command, prov.args, cfg, out);
}

}  // namespace calm
