#include "cmn/commands.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmn/errors.hpp"
#include "cmn/search.hpp"

namespace cmn {

namespace {

namespace fs = std::filesystem;

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw FileError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

Manifest require_manifest(const RunConfig& cfg) {
    if (cfg.manifest.empty()) throw ConfigError("key 'manifest' is required (path to a manifest.json)");
    return load_manifest(cfg.manifest);
}

SearchOptions search_options(const RunConfig& cfg, const ModelConfig& model) {
    if (cfg.max_len >= model.max_positions) {
        throw ConfigError("max_len (" + std::to_string(cfg.max_len) + ") must be below max_positions (" +
                          std::to_string(model.max_positions) + ")");
    }
    SearchOptions o;
    o.beam_size = cfg.beam_size;
    o.max_len = cfg.max_len;
    o.alpha = cfg.alpha;
    return o;
}

/// Model keys set explicitly in cfg must match the checkpoint's config.
void check_checkpoint(const RunConfig& cfg, const ModelConfig& stored, const fs::path& path) {
    RunConfig view = cfg;
    view.model = stored;
    const auto want = cfg.to_pairs();
    const auto have = view.to_pairs();
    const auto model_keys = stored.to_pairs();
    std::string diff;
    for (std::size_t i = 0; i < want.size(); ++i) {
        const auto& key = want[i].first;
        const bool is_model_key = std::any_of(model_keys.begin(), model_keys.end(),
                                              [&](const auto& p) { return p.first == key; });
        if (is_model_key && cfg.is_explicit(key) && want[i].second != have[i].second)
            diff += " " + key + " (config " + want[i].second + ", checkpoint " + have[i].second + ")";
    }
    if (!diff.empty()) throw StateMismatchError("checkpoint " + path.string() + " does not match config:" + diff);
}

std::size_t first_visual_dim(const RunConfig& cfg, const Manifest& m) {
    if (m.records.empty()) throw ArgumentError("manifest has no records");
    return load_record_visual(m, m.records.front(), cfg.patch, cfg.feature_dim).shape()[1];
}

}  // namespace

Dataset load_dataset(const RunConfig& cfg) {
    Dataset d;
    d.manifest = require_manifest(cfg);
    d.vocab = build_vocab(d.manifest, cfg.min_count);
    d.input_dim = first_visual_dim(cfg, d.manifest);
    return d;
}

ModelConfig resolve_model_config(const RunConfig& cfg, const Dataset& data) {
    ModelConfig m = cfg.model;
    m.vocab_size = data.vocab.size();
    m.input_dim = data.input_dim;
    try {
        m.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    return m;
}

std::vector<TrainingPair> make_pairs(const RunConfig& cfg, const Dataset& data, const std::string& split) {
    std::vector<TrainingPair> out;
    for (const auto* r : data.manifest.split(split)) {
        out.push_back({load_record_visual(data.manifest, *r, cfg.patch, cfg.feature_dim),
                       encode_report(data.vocab, r->report, cfg.model.max_positions)});
    }
    return out;
}

std::vector<Generation> generate_reports(const ReportModel& model, const Vocabulary& vocab, const Manifest& manifest,
                                         const std::string& split, const RunConfig& cfg) {
    const auto options = search_options(cfg, model.config());
    std::vector<Generation> out;
    for (const auto* r : manifest.split(split)) {
        const Tensor raw = load_record_visual(manifest, *r, cfg.patch, cfg.feature_dim);
        if (raw.shape()[1] != model.config().input_dim) {
            throw StateMismatchError("record '" + r->id + "' has visual width " + std::to_string(raw.shape()[1]) +
                                     ", model expects " + std::to_string(model.config().input_dim));
        }
        const EncodedImage image = model.encode_image(raw);
        const Hypothesis h = beam_search(model_scorer(model, image), options);
        Generation g;
        g.id = r->id;
        const auto content = h.content();
        g.tokens = vocab.decode(content);
        g.text = join_tokens(g.tokens);
        g.score = h.score(options.alpha);
        out.push_back(std::move(g));
    }
    return out;
}

void write_generations(const fs::path& path, const std::vector<Generation>& gens) {
    std::ofstream out(path);
    if (!out) throw FileError("cannot write generations " + path.string());
    for (const auto& g : gens) {
        nlohmann::ordered_json j;
        j["id"] = g.id;
        j["tokens"] = g.tokens;
        j["text"] = g.text;
        j["score"] = g.score;
        out << j.dump() << '\n';
    }
    if (!out) throw FileError("write failed for " + path.string());
}

std::vector<Generation> read_generations(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open generations " + path.string());
    std::vector<Generation> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Generation g;
            g.id = j.at("id").get<std::string>();
            g.text = j.at("text").get<std::string>();
            if (j.contains("tokens")) g.tokens = j["tokens"].get<Tokens>();
            else g.tokens = tokenize(g.text);
            if (j.contains("score")) g.score = j["score"].get<double>();
            out.push_back(std::move(g));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

EvalResult evaluate_generations(const std::vector<Generation>& gens, const Manifest& manifest,
                                const RuleTable& rules) {
    if (gens.empty()) throw ArgumentError("no generations to evaluate");
    std::vector<CorpusPair> corpus;
    std::map<std::string, LabelSet> predicted, gold;
    std::set<std::string> universe = rules.categories();
    for (const auto& g : gens) {
        const auto& rec = manifest.find(g.id);
        if (predicted.count(g.id)) throw ArgumentError("duplicate generation for '" + g.id + "'");
        const Tokens candidate = tokenize(g.text);
        corpus.push_back({candidate, tokenize(rec.report)});
        predicted[g.id] = rule_labeler(candidate, rules);
        gold[g.id] = LabelSet(rec.labels.begin(), rec.labels.end());
        universe.insert(rec.labels.begin(), rec.labels.end());
    }
    EvalResult r;
    r.bleu = bleu(corpus, 4);
    r.rouge_l = rouge_l(corpus);
    r.labels = label_prf(predicted, gold, universe);
    r.count = gens.size();
    return r;
}

std::string table_header() {
    return "| Model | BL-1 | BL-2 | BL-3 | BL-4 | MTR | RG-L | P | R | F1 |\n"
           "|---|---|---|---|---|---|---|---|---|---|";
}

std::string table_row(const std::string& name, const EvalResult& r) {
    std::ostringstream s;
    s << "| " << name;
    for (double v : r.bleu.bleu) s << " | " << fixed(v, 3);
    s << " | n/a | " << fixed(r.rouge_l, 3) << " | " << fixed(r.labels.precision, 3) << " | "
      << fixed(r.labels.recall, 3) << " | " << fixed(r.labels.f1, 3) << " |";
    return s.str();
}

void write_metrics_json(const fs::path& path, const EvalResult& r) {
    nlohmann::ordered_json j;
    for (std::size_t n = 0; n < 4; ++n) j["BL-" + std::to_string(n + 1)] = r.bleu.bleu[n];
    j["METEOR"] = nullptr;
    j["RG-L"] = r.rouge_l;
    j["P"] = r.labels.precision;
    j["R"] = r.labels.recall;
    j["F1"] = r.labels.f1;
    j["brevity_penalty"] = r.bleu.brevity_penalty;
    j["count"] = r.count;
    std::ofstream out(path);
    if (!out) throw FileError("cannot write metrics " + path.string());
    out << j.dump(2) << '\n';
}

TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& log) {
    const Dataset data = load_dataset(cfg);
    const ModelConfig mc = resolve_model_config(cfg, data);
    search_options(cfg, mc);
    try {
        cfg.schedule.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    if (cfg.epochs == 0) throw ConfigError("key 'epochs' must be at least 1");
    if (cfg.batch_size == 0) throw ConfigError("key 'batch_size' must be at least 1");
    const auto pairs = make_pairs(cfg, data, "train");
    if (pairs.empty()) throw ArgumentError("train split is empty");

    ensure_dir(cfg.output_dir);
    cfg.write(cfg.output_dir / "config.txt");

    ReportModel model(mc, cfg.seed);
    TrainOutcome outcome;
    outcome.parameter_count = model.parameter_count();
    outcome.memory_parameter_count = model.memory_parameter_count();
    outcome.last_checkpoint = cfg.output_dir / "last.ckpt";
    outcome.best_checkpoint = cfg.output_dir / "best.ckpt";
    log << "train: " << pairs.size() << " pairs, vocab " << data.vocab.size() << ", " << outcome.parameter_count
        << " parameters (" << outcome.memory_parameter_count << " memory)\n";

    const bool select = !data.manifest.split(cfg.select_split).empty();
    const auto start = std::chrono::steady_clock::now();
    TrainOptions opts;
    opts.epochs = cfg.epochs;
    opts.batch_size = cfg.batch_size;
    opts.seed = cfg.seed;
    opts.grad_clip = cfg.grad_clip;
    opts.max_steps = cfg.max_steps;
    opts.checkpoint_dir = cfg.output_dir;
    opts.vocab = data.vocab.tokens();
    opts.on_epoch = [&](std::size_t epoch, const ReportModel& m) {
        double score = 0.0;
        if (select) {
            const auto gens = generate_reports(m, data.vocab, data.manifest, cfg.select_split, cfg);
            std::vector<CorpusPair> corpus;
            for (const auto& g : gens) corpus.push_back({g.tokens, tokenize(data.manifest.find(g.id).report)});
            score = bleu(corpus, 4).bleu[3];
        }
        outcome.epoch_scores.push_back(score);
        const bool best = score > outcome.best_score;
        if (best) {
            outcome.best_score = score;
            outcome.best_epoch = epoch;
            save_checkpoint(outcome.best_checkpoint, m, data.vocab.tokens());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log << "epoch " << epoch << "  " << cfg.select_split << " BL-4 " << fixed(score, 4) << (best ? " *" : "")
            << "  (" << fixed(secs, 1) << " s)\n";
    };
    outcome.result = train(model, pairs, cfg.schedule, opts);
    write_loss_log(cfg.output_dir / "loss.csv", outcome.result.log);

    nlohmann::ordered_json summary;
    summary["best_epoch"] = outcome.best_epoch;
    summary["best_score"] = outcome.best_score;
    summary["select_split"] = cfg.select_split;
    summary["epoch_scores"] = outcome.epoch_scores;
    summary["steps"] = outcome.result.steps;
    summary["parameter_count"] = outcome.parameter_count;
    summary["memory_parameter_count"] = outcome.memory_parameter_count;
    std::ofstream(cfg.output_dir / "summary.json") << summary.dump(2) << '\n';
    return outcome;
}

std::vector<Generation> cmd_generate(const RunConfig& cfg, const fs::path& checkpoint, const std::string& split,
                                     const fs::path& out, std::ostream& log) {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    check_checkpoint(cfg, ckpt.config, checkpoint);
    const Manifest manifest = require_manifest(cfg);
    if (split != "train" && split != "val" && split != "test") throw ConfigError("unknown split '" + split + "'");
    const Vocabulary vocab(ckpt.vocab);
    const auto gens = generate_reports(*ckpt.model, vocab, manifest, split, cfg);
    const fs::path path = out.empty() ? cfg.output_dir / ("generations_" + split + ".jsonl") : out;
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    write_generations(path, gens);
    RunConfig resolved = cfg;
    resolved.model = ckpt.config;
    resolved.write(path.parent_path().empty() ? fs::path("config.txt") : path.parent_path() / "config.txt");
    log << "generate: " << gens.size() << " reports -> " << path.string() << '\n';
    return gens;
}

EvalResult cmd_evaluate(const fs::path& generations, const fs::path& manifest, const fs::path& rules,
                        const fs::path& out_json, const std::string& name, std::ostream& out) {
    const Manifest m = load_manifest(manifest);
    RuleTable table = synthetic_rule_table();
    if (!rules.empty()) {
        std::ifstream in(rules);
        if (!in) throw FileError("cannot open rules " + rules.string());
        std::stringstream buffer;
        buffer << in.rdbuf();
        table = RuleTable::parse(buffer.str());
    }
    const EvalResult r = evaluate_generations(read_generations(generations), m, table);
    if (!out_json.empty()) {
        if (out_json.has_parent_path()) ensure_dir(out_json.parent_path());
        write_metrics_json(out_json, r);
    }
    out << table_header() << '\n' << table_row(name, r) << '\n';
    return r;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, const std::string& axis, const std::vector<std::size_t>& values,
                                std::ostream& log) {
    std::string key;
    if (axis == "memory_slots" || axis == "memory_size") key = "memory_slots";
    else if (axis == "topk" || axis == "queried_k") key = "topk";
    else throw ConfigError("sweep axis must be memory_size or queried_k, got '" + axis + "'");
    if (values.empty()) throw ConfigError("sweep needs at least one value");

    ensure_dir(cfg.output_dir);
    cfg.write(cfg.output_dir / "config.txt");
    const Manifest manifest = require_manifest(cfg);
    std::vector<SweepRow> rows;
    for (std::size_t v : values) {
        RunConfig run = cfg;
        run.set(key, std::to_string(v));
        run.output_dir = cfg.output_dir / (key + "-" + std::to_string(v));
        log << "sweep: " << key << " = " << v << '\n';
        const TrainOutcome t = cmd_train(run, log);
        const Checkpoint ckpt = load_checkpoint(t.best_checkpoint);
        const auto gens = generate_reports(*ckpt.model, Vocabulary(ckpt.vocab), manifest, "test", run);
        write_generations(run.output_dir / "generations_test.jsonl", gens);
        const EvalResult r = evaluate_generations(gens, manifest, synthetic_rule_table());
        rows.push_back({v, r.bleu.bleu[3], t.parameter_count});
    }
    std::ofstream csv(cfg.output_dir / "sweep.csv");
    if (!csv) throw FileError("cannot write " + (cfg.output_dir / "sweep.csv").string());
    csv << "value,BL-4,param_count\n";
    csv << std::setprecision(17);
    for (const auto& r : rows) csv << r.value << ',' << r.bleu4 << ',' << r.param_count << '\n';
    return rows;
}

AttnExport cmd_export_attn(const RunConfig& cfg, const fs::path& checkpoint, const std::string& record_id,
                           std::ostream& log) {
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    check_checkpoint(cfg, ckpt.config, checkpoint);
    if (!ckpt.config.uses_memory()) throw ConfigError("variant base has no memory to export");
    const Manifest manifest = require_manifest(cfg);
    const auto& record = manifest.find(record_id);
    const Vocabulary vocab(ckpt.vocab);
    const ReportModel& model = *ckpt.model;

    AttnExport ex;
    const Tensor raw = load_record_visual(manifest, record, cfg.patch, cfg.feature_dim);
    const EncodedImage image = model.encode_image(raw);
    ex.visual = image.visual_trace;
    auto ids = encode_report(vocab, record.report, ckpt.config.max_positions);
    ids.pop_back();
    ex.decoder_input = ids;
    {
        NoGradGuard guard;
        ForwardContext ctx;
        ctx.memory = image.memory.get();
        model.textual_responses(model.embed_tokens(ids), ctx, &ex.textual);
    }

    ensure_dir(cfg.output_dir);
    RunConfig resolved = cfg;
    resolved.model = ckpt.config;
    resolved.write(cfg.output_dir / "config.txt");
    ex.visual_csv = cfg.output_dir / "attn_visual.csv";
    ex.textual_csv = cfg.output_dir / "attn_textual.csv";
    ex.tokens_csv = cfg.output_dir / "attn_tokens.csv";
    const auto dump = [](const fs::path& p, const std::string& modality, const QueryTrace& t) {
        std::ofstream out(p);
        if (!out) throw FileError("cannot write " + p.string());
        write_trace_csv_header(out);
        write_trace_csv(out, modality, t);
    };
    dump(ex.visual_csv, "visual", ex.visual);
    dump(ex.textual_csv, "textual", ex.textual);
    std::ofstream tokens(ex.tokens_csv);
    if (!tokens) throw FileError("cannot write " + ex.tokens_csv.string());
    tokens << "position,token_id,token\n";
    for (std::size_t i = 0; i < ids.size(); ++i) tokens << i << ',' << ids[i] << ',' << vocab.token(ids[i]) << '\n';
    log << "export-attn: " << ex.visual.positions() << " visual and " << ex.textual.positions()
        << " textual positions -> " << cfg.output_dir.string() << '\n';
    return ex;
}

ParamReport cmd_param_count(const RunConfig& cfg, std::size_t vocab_size, std::ostream& out) {
    ModelConfig mc = cfg.model;
    if (vocab_size == 0) {
        if (cfg.manifest.empty()) throw ConfigError("param-count needs --vocab-size or key 'manifest'");
        const Dataset data = load_dataset(cfg);
        mc = resolve_model_config(cfg, data);
    } else {
        mc.vocab_size = vocab_size;
        mc.input_dim = cfg.feature_dim ? cfg.feature_dim : cfg.patch * cfg.patch;
        try {
            mc.validate();
        } catch (const ArgumentError& e) {
            throw ConfigError(e.what());
        }
    }
    const ReportModel model(mc, cfg.seed);
    ParamReport r;
    r.total = model.parameter_count();
    r.memory = model.memory_parameter_count();
    r.backbone = r.total - r.memory;
    const std::size_t modules = mc.variant == Variant::Mem ? 2 : (mc.variant == Variant::Cmn ? 1 : 0);
    r.formula = modules * memory_param_count(mc.memory_slots, mc.d_model, mc.memory_heads).total;
    r.overhead_percent = r.backbone ? 100.0 * static_cast<double>(r.memory) / static_cast<double>(r.backbone) : 0.0;
    out << "variant            " << to_string(mc.variant) << '\n'
        << "total parameters   " << r.total << '\n'
        << "memory parameters  " << r.memory << '\n'
        << "backbone           " << r.backbone << '\n'
        << "formula            " << r.formula << "  (N*d + 3*H*d*d_h + d*d per memory)\n"
        << "overhead           " << fixed(r.overhead_percent, 2) << "% of backbone\n";
    return r;
}

Manifest cmd_gen_corpus(const CorpusOptions& options, const fs::path& out_dir, std::ostream& out) {
    const Manifest m = generate_corpus(options, out_dir);
    const auto stats = corpus_stats(m);
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    out << "| split | images | reports | avg len |\n|---|---|---|---|\n";
    for (const auto& s : stats) {
        out << "| " << s.split << " | " << s.images << " | " << s.reports << " | " << fixed(s.avg_length, 2)
            << " |\n";
        j.push_back({{"split", s.split}, {"images", s.images}, {"reports", s.reports}, {"avg_length", s.avg_length}});
    }
    std::ofstream(out_dir / "stats.json") << j.dump(2) << '\n';
    std::ofstream params(out_dir / "corpus_config.txt");
    params << "seed = " << options.seed << "\nn_train = " << options.n_train << "\nn_val = " << options.n_val
           << "\nn_test = " << options.n_test << "\ngrid = " << options.grid << "\nglyphs = " << options.glyphs
           << "\nabnormal_rate = " << options.abnormal_rate << "\nfeature_patch = " << options.feature_patch << '\n';
    return m;
}

namespace {

struct CommonArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string manifest;
    std::string output_dir;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config, "key=value config file");
        app->add_option("-s,--set", sets, "override as key=value (repeatable)");
        app->add_option("--manifest", manifest, "manifest.json path");
        app->add_option("-o,--output-dir", output_dir, "output directory");
    }

    RunConfig resolve() const {
        std::vector<std::string> all = sets;
        if (!manifest.empty()) all.push_back("manifest=" + manifest);
        if (!output_dir.empty()) all.push_back("output_dir=" + output_dir);
        return load_run_config(config, all);
    }
};

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-modal memory report generation"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic glyph corpus");
    CorpusOptions corpus;
    std::string corpus_out;
    gen->add_option("--out", corpus_out, "output directory");
    gen->add_option("--seed", corpus.seed);
    gen->add_option("--train", corpus.n_train);
    gen->add_option("--val", corpus.n_val);
    gen->add_option("--test", corpus.n_test);
    gen->add_option("--grid", corpus.grid);
    gen->add_option("--glyphs", corpus.glyphs);
    gen->add_option("--abnormal-rate", corpus.abnormal_rate);
    gen->add_option("--feature-patch", corpus.feature_patch, "write patch feature files instead of images");

    CommonArgs train_args, gen_args, eval_args, sweep_args, attn_args, count_args;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_args.attach(train_cmd);

    auto* generate_cmd = app.add_subcommand("generate", "write reports for a split as JSON lines");
    gen_args.attach(generate_cmd);
    std::string checkpoint, split = "test", gen_out;
    generate_cmd->add_option("--checkpoint", checkpoint)->required();
    generate_cmd->add_option("--split", split);
    generate_cmd->add_option("--out", gen_out, "JSONL path");

    auto* eval_cmd = app.add_subcommand("evaluate", "score generations against a manifest");
    eval_args.attach(eval_cmd);
    std::string generations, rules, eval_out, name;
    eval_cmd->add_option("--generations", generations)->required();
    eval_cmd->add_option("--rules", rules, "labeler rule file");
    eval_cmd->add_option("--out", eval_out, "metrics JSON path");
    eval_cmd->add_option("--name", name, "row label");

    auto* sweep_cmd = app.add_subcommand("sweep", "train one model per value of memory_size or queried_k");
    sweep_args.attach(sweep_cmd);
    std::string axis;
    std::vector<std::size_t> values;
    sweep_cmd->add_option("--axis", axis)->required();
    sweep_cmd->add_option("--values", values)->required()->delimiter(',');

    auto* attn_cmd = app.add_subcommand("export-attn", "export memory query traces for one record");
    attn_args.attach(attn_cmd);
    std::string attn_ckpt, record;
    attn_cmd->add_option("--checkpoint", attn_ckpt)->required();
    attn_cmd->add_option("--record", record)->required();

    auto* count_cmd = app.add_subcommand("param-count", "count parameters and memory overhead");
    count_args.attach(count_cmd);
    std::size_t vocab_size = 0;
    count_cmd->add_option("--vocab-size", vocab_size);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            fs::path dir = corpus_out;
            if (dir.empty()) {
                const char* env = std::getenv("CMN_OUTPUT_DIR");
                dir = env && *env ? fs::path(env) : fs::path("corpus");
            }
            cmd_gen_corpus(corpus, dir, out);
        } else if (train_cmd->parsed()) {
            const auto t = cmd_train(train_args.resolve(), err);
            out << "best epoch " << t.best_epoch << " BL-4 " << fixed(t.best_score, 4) << '\n';
        } else if (generate_cmd->parsed()) {
            cmd_generate(gen_args.resolve(), checkpoint, split, gen_out, err);
        } else if (eval_cmd->parsed()) {
            const RunConfig cfg = eval_args.resolve();
            if (cfg.manifest.empty()) throw ConfigError("key 'manifest' is required (path to a manifest.json)");
            const fs::path json = eval_out.empty() ? cfg.output_dir / "metrics.json" : fs::path(eval_out);
            cmd_evaluate(generations, cfg.manifest, rules, json, name.empty() ? to_string(cfg.model.variant) : name,
                         out);
            cfg.write(json.has_parent_path() ? json.parent_path() / "config.txt" : fs::path("config.txt"));
        } else if (sweep_cmd->parsed()) {
            const auto rows = cmd_sweep(sweep_args.resolve(), axis, values, err);
            out << "value,BL-4,param_count\n";
            for (const auto& r : rows) out << r.value << ',' << fixed(r.bleu4, 4) << ',' << r.param_count << '\n';
        } else if (attn_cmd->parsed()) {
            cmd_export_attn(attn_args.resolve(), attn_ckpt, record, err);
        } else if (count_cmd->parsed()) {
            cmd_param_count(count_args.resolve(), vocab_size, out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ArgumentError& e) {
        err << "argument error: " << e.what() << '\n';
        return 2;
    } catch (const StateMismatchError& e) {
        err << "state mismatch: " << e.what() << '\n';
        return 3;
    } catch (const FileError& e) {
        err << "i/o error: " << e.what() << '\n';
        return 4;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace cmn
