// flower: flow-guided fine-tuning for catalog-constrained recommendation.
//
// Subcommands: make-zipf, ingest, train, generate, eval, sweep. Each run
// archives its resolved configuration so re-running with the archived config
// and seed reproduces outputs byte for byte.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flower/catalog.hpp"
#include "flower/decode.hpp"
#include "flower/eval.hpp"
#include "flower/flow_tree.hpp"
#include "flower/io.hpp"
#include "flower/policy.hpp"
#include "flower/prefs.hpp"
#include "flower/synthetic.hpp"
#include "flower/training.hpp"

namespace fs = std::filesystem;
using namespace flower;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct TrainArgs {
    std::string data_dir;
    std::string out_dir;
    double lambda = 0.005;
    std::string reward_variant = "plain";
    std::string granularity = "1";
    double lr = 0.1;
    int batch_size = 32;
    int epochs = 20;
    int patience = 3;
    int b_samples = 4;
    uint64_t seed = 0;
    int max_steps = 0;
    bool sft_only = false;
    bool subtb_only = false;
    bool history_free = false;
    std::string mode = "tabular";
    int embed_dim = 8;
    double momentum = 0.0;
    bool normalize_subtb = false;
    double eps_floor = 0.0;
    double pref_alpha = 1.0;
    std::string pref_scores_file;
};

int parse_granularity(const std::string& g) {
    if (g == "whole") return kGranularityWhole;
    try {
        int v = std::stoi(g);
        if (v >= 1) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::Config, "granularity must be a positive integer or 'whole'");
}

TrainConfig to_train_config(const TrainArgs& a) {
    TrainConfig cfg;
    cfg.lambda = a.sft_only ? 0.0 : a.lambda;
    cfg.variant = reward_variant_from_name(a.reward_variant);
    cfg.granularity = parse_granularity(a.granularity);
    cfg.learning_rate = a.lr;
    cfg.batch_size = a.batch_size;
    cfg.max_epochs = a.epochs;
    cfg.patience = a.patience;
    cfg.onpolicy_samples = a.b_samples;
    cfg.seed = a.seed;
    cfg.max_steps = a.max_steps;
    cfg.sft_only = a.sft_only;
    cfg.subtb_only = a.subtb_only;
    cfg.history_free = a.history_free;
    cfg.mode = policy_mode_from_name(a.mode);
    cfg.embed_dim = a.embed_dim;
    cfg.momentum = a.momentum;
    cfg.normalize_subtb = a.normalize_subtb;
    return cfg;
}

std::vector<std::pair<std::string, std::string>> train_config_echo(const TrainArgs& a) {
    auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
    return {
        {"data", a.data_dir},
        {"out", a.out_dir},
        {"lambda", format_double(a.lambda)},
        {"reward-variant", a.reward_variant},
        {"granularity", a.granularity},
        {"lr", format_double(a.lr)},
        {"batch-size", std::to_string(a.batch_size)},
        {"epochs", std::to_string(a.epochs)},
        {"patience", std::to_string(a.patience)},
        {"b-samples", std::to_string(a.b_samples)},
        {"seed", std::to_string(a.seed)},
        {"max-steps", std::to_string(a.max_steps)},
        {"sft-only", b(a.sft_only)},
        {"subtb-only", b(a.subtb_only)},
        {"history-free", b(a.history_free)},
        {"mode", a.mode},
        {"embed-dim", std::to_string(a.embed_dim)},
        {"momentum", format_double(a.momentum)},
        {"normalize-subtb", b(a.normalize_subtb)},
        {"eps-floor", format_double(a.eps_floor)},
        {"pref-alpha", format_double(a.pref_alpha)},
        {"pref-scores", a.pref_scores_file},
    };
}

std::unique_ptr<PrefProvider> make_pref_provider(const TrainArgs& a, const Dataset& ds) {
    if (!a.pref_scores_file.empty()) {
        OverridePrefProvider::UserScores scores;
        std::ifstream in(a.pref_scores_file, std::ios::binary);
        if (!in) fail(ErrorCode::Io, "cannot open pref scores: " + a.pref_scores_file);
        std::string line;
        size_t row = 0;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded())
                fail(ErrorCode::Parse,
                     a.pref_scores_file + " row " + std::to_string(row) + ": invalid json");
            scores[j.at("user").get<std::string>()][j.at("item").get<std::string>()] =
                j.at("p").get<double>();
        }
        return std::make_unique<OverridePrefProvider>(std::move(scores));
    }
    return std::make_unique<ModelPrefProvider>(fit_prefs(ds, a.pref_alpha));
}

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
    cmd->add_option("--data", a.data_dir, "data directory written by ingest")->required();
    cmd->add_option("--out", a.out_dir, "run output directory")->required();
    cmd->add_option("--lambda", a.lambda, "SubTB loss weight");
    cmd->add_option("--reward-variant", a.reward_variant, "plain|div|mul");
    cmd->add_option("--granularity", a.granularity, "1|5|10|...|whole");
    cmd->add_option("--lr", a.lr, "learning rate");
    cmd->add_option("--batch-size", a.batch_size, "examples per step");
    cmd->add_option("--epochs", a.epochs, "max epochs");
    cmd->add_option("--patience", a.patience, "early-stopping patience (epochs)");
    cmd->add_option("--b-samples", a.b_samples, "on-policy titles per batch example");
    cmd->add_option("--seed", a.seed, "run seed");
    cmd->add_option("--max-steps", a.max_steps, "fixed step budget (disables early stopping)");
    cmd->add_flag("--sft-only", a.sft_only, "pure SFT baseline (lambda forced to 0)");
    cmd->add_flag("--subtb-only", a.subtb_only, "drop the SFT term (distribution fitting)");
    cmd->add_flag("--history-free", a.history_free, "ignore histories; empty contexts");
    cmd->add_option("--mode", a.mode, "tabular|contextual");
    cmd->add_option("--embed-dim", a.embed_dim, "context embedding dimension");
    cmd->add_option("--momentum", a.momentum, "SGD momentum");
    cmd->add_flag("--normalize-subtb", a.normalize_subtb,
                  "average SubTB over sampled titles and pairs instead of raw sum");
    cmd->add_option("--eps-floor", a.eps_floor, "reward floor for zero-frequency items");
    cmd->add_option("--pref-alpha", a.pref_alpha, "co-occurrence smoothing");
    cmd->add_option("--pref-scores", a.pref_scores_file, "JSONL preference score override file");
}

int run_train(const TrainArgs& args) {
    auto data = load_data_dir(args.data_dir);
    auto tree = build_prefix_tree(data.catalog, args.eps_floor);
    auto cfg = to_train_config(args);

    std::unique_ptr<PrefProvider> prefs;
    if (cfg.variant != RewardVariant::Plain && !cfg.sft_only && cfg.lambda > 0.0)
        prefs = make_pref_provider(args, data.dataset);

    fs::create_directories(args.out_dir);
    save_config_echo(train_config_echo(args), args.out_dir + "/config.txt");

    auto hook = [&](int epoch, const PolicyParams& params) {
        char name[64];
        std::snprintf(name, sizeof(name), "/checkpoint_epoch_%04d.json", epoch);
        save_checkpoint(params, tree, args.out_dir + name);
    };
    auto result = train(data.dataset, tree, cfg, prefs.get(), hook);

    save_train_log(result.log, args.out_dir + "/train_log.csv");
    save_checkpoint(result.params, tree, args.out_dir + "/checkpoint_best.json");
    std::cout << "trained " << result.log.size() << " epochs ("
              << (result.log.empty() ? 0 : result.log.back().step) << " steps); best epoch "
              << result.best_epoch << "\n";
    return kExitOk;
}

struct GenerateArgs {
    std::string data_dir, checkpoint, out_file;
    int k = 10;
    double temperature = 1.0;
    std::string strategy = "topk";
    std::string split = "test";
    bool history_free = false;
    double eps_floor = 0.0;
    uint64_t seed = 0;
};

int run_generate(const GenerateArgs& args) {
    if (!fs::exists(args.checkpoint))
        fail(ErrorCode::Config, "checkpoint not found: " + args.checkpoint);
    auto data = load_data_dir(args.data_dir);
    auto tree = build_prefix_tree(data.catalog, args.eps_floor);
    auto params = load_checkpoint(tree, args.checkpoint);

    const std::vector<Example>* split = nullptr;
    if (args.split == "test") split = &data.dataset.test;
    else if (args.split == "valid") split = &data.dataset.valid;
    else if (args.split == "train") split = &data.dataset.train;
    else fail(ErrorCode::Config, "unknown split: " + args.split);
    if (split->empty()) fail(ErrorCode::Domain, "split '" + args.split + "' is empty");

    bool sampled = args.strategy == "sample";
    if (!sampled && args.strategy != "topk")
        fail(ErrorCode::Config, "unknown strategy: " + args.strategy);

    Rng rng(args.seed);
    std::vector<RecLine> out;
    out.reserve(split->size());
    for (size_t i = 0; i < split->size(); ++i) {
        const auto& ex = (*split)[i];
        Context ctx;
        if (params.mode == PolicyMode::Contextual) {
            ctx = args.history_free ? Context(params.dim, 0.0)
                                    : encode_context(ex.history, tree, params);
        }
        RankedList list = sampled ? sample_list(tree, ctx, params, args.k, args.temperature, rng)
                                  : generate_topk(tree, ctx, params, args.k, args.temperature);
        RecLine line;
        line.user = ex.user_id;
        line.example_index = i;
        for (const auto& e : list.entries) {
            line.items.push_back(tree.item_id(e.item));
            line.scores.push_back(e.score);
        }
        out.push_back(std::move(line));
    }

    nlohmann::json settings{{"k", args.k},
                            {"temperature", args.temperature},
                            {"strategy", args.strategy},
                            {"split", args.split},
                            {"checkpoint", args.checkpoint},
                            {"seed", args.seed},
                            {"history_free", args.history_free}};
    if (auto dir = fs::path(args.out_file).parent_path(); !dir.empty())
        fs::create_directories(dir);
    save_recs(out, settings, args.out_file);
    std::cout << "wrote " << out.size() << " recommendation lists to " << args.out_file << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string data_dir, recs_file, out_dir;
    int k = 5;
    std::string split = "test";
};

MetricsReport eval_recs(const EvalArgs& args) {
    auto data = load_data_dir(args.data_dir);
    auto recs = load_recs(args.recs_file);
    if (recs.empty()) fail(ErrorCode::Domain, "no recommendation lines in " + args.recs_file);

    const std::vector<Example>* split = nullptr;
    if (args.split == "test") split = &data.dataset.test;
    else if (args.split == "valid") split = &data.dataset.valid;
    else if (args.split == "train") split = &data.dataset.train;
    else fail(ErrorCode::Config, "unknown split: " + args.split);

    std::vector<std::vector<std::string>> lists;
    std::vector<std::string> targets;
    for (const auto& line : recs) {
        if (line.example_index >= split->size())
            fail(ErrorCode::Parse, "recommendation index out of range for split");
        std::vector<std::string> items = line.items;
        if (static_cast<int>(items.size()) > args.k) items.resize(args.k);
        lists.push_back(std::move(items));
        targets.push_back((*split)[line.example_index].target);
    }
    return compute_metrics(lists, targets, args.k, data.catalog, data.groups);
}

int run_eval(const EvalArgs& args) {
    if (!fs::exists(args.recs_file))
        fail(ErrorCode::Config, "recommendations not found: " + args.recs_file);
    auto report = eval_recs(args);
    fs::create_directories(args.out_dir);
    save_metrics(report, args.out_dir + "/metrics.csv", args.out_dir + "/metrics.txt",
                 args.out_dir + "/group_hist.csv");
    std::cout << "HR@" << report.k << " " << report.hr << "  NDCG@" << report.k << " "
              << report.ndcg << "  DGU " << report.dgu << "  MGU " << report.mgu << "  H "
              << report.entropy_h << "  TTR " << report.ttr << "\n";
    return kExitOk;
}

struct SweepArgs {
    TrainArgs train;
    std::string param;
    std::vector<std::string> values;
    int k = 5;
    double temperature = 1.0;
    std::string strategy = "topk";
    std::string split = "test";
};

int run_sweep(const SweepArgs& args) {
    if (args.values.empty()) fail(ErrorCode::Config, "sweep requires --values");
    static const std::set<std::string> known{"lambda", "granularity", "temperature",
                                             "reward-variant", "seed"};
    if (!known.count(args.param)) fail(ErrorCode::Config, "unknown sweep param: " + args.param);

    fs::create_directories(args.train.out_dir);
    std::ofstream combined(args.train.out_dir + "/sweep.csv", std::ios::binary);
    combined << "param,value," << metrics_csv_header() << "\n";

    for (const auto& value : args.values) {
        TrainArgs t = args.train;
        double temperature = args.temperature;
        if (args.param == "lambda") t.lambda = std::stod(value);
        else if (args.param == "granularity") t.granularity = value;
        else if (args.param == "reward-variant") t.reward_variant = value;
        else if (args.param == "seed") t.seed = std::stoull(value);
        else if (args.param == "temperature") temperature = std::stod(value);
        t.out_dir = args.train.out_dir + "/" + args.param + "_" + value;

        run_train(t);
        GenerateArgs g;
        g.data_dir = t.data_dir;
        g.checkpoint = t.out_dir + "/checkpoint_best.json";
        g.out_file = t.out_dir + "/recs.jsonl";
        g.k = args.k;
        g.temperature = temperature;
        g.strategy = args.strategy;
        g.split = args.split;
        g.history_free = t.history_free;
        g.eps_floor = t.eps_floor;
        g.seed = t.seed;
        run_generate(g);
        EvalArgs e;
        e.data_dir = t.data_dir;
        e.recs_file = g.out_file;
        e.out_dir = t.out_dir;
        e.k = args.k;
        e.split = args.split;
        auto report = eval_recs(e);
        save_metrics(report, t.out_dir + "/metrics.csv", t.out_dir + "/metrics.txt",
                     t.out_dir + "/group_hist.csv");
        combined << args.param << "," << value << "," << metrics_csv_row(report) << "\n";
        std::cout << args.param << "=" << value << " done\n";
    }
    std::cout << "sweep csv: " << args.train.out_dir << "/sweep.csv\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-guided fine-tuning recommender"};
    app.require_subcommand(1);

    // make-zipf
    ZipfSpec zipf;
    std::string zipf_out;
    auto* mk = app.add_subcommand("make-zipf", "generate a synthetic Zipf interaction log");
    mk->add_option("--items", zipf.items, "catalog size");
    mk->add_option("--users", zipf.users, "user count");
    mk->add_option("--interactions", zipf.interactions, "log length");
    mk->add_option("--exponent", zipf.exponent, "Zipf exponent");
    mk->add_option("--seed", zipf.seed, "generator seed");
    mk->add_option("--min-words", zipf.min_words, "min words per title");
    mk->add_option("--max-words", zipf.max_words, "max words per title");
    mk->add_option("--out", zipf_out, "output JSONL path")->required();

    // ingest
    std::string in_path, in_format = "jsonl", in_out, in_tokenizer = "word";
    int k_core = 5, max_len = 10, num_groups = 8;
    std::optional<int64_t> t0, t1;
    auto* ing = app.add_subcommand("ingest", "preprocess a log into dataset + catalog manifests");
    ing->add_option("--input", in_path, "interaction log")->required();
    ing->add_option("--format", in_format, "csv|jsonl");
    ing->add_option("--k-core", k_core, "iterative k-core threshold");
    ing->add_option("--max-len", max_len, "max history length");
    ing->add_option("--tokenizer", in_tokenizer, "word|char");
    ing->add_option("--groups", num_groups, "popularity group count");
    ing->add_option("--t0", t0, "time window start (inclusive)");
    ing->add_option("--t1", t1, "time window end (inclusive)");
    ing->add_option("--out", in_out, "output data directory")->required();

    // train
    TrainArgs train_args;
    auto* tr = app.add_subcommand("train", "fit the policy with the combined loss");
    add_train_flags(tr, train_args);

    // generate
    GenerateArgs gen;
    auto* ge = app.add_subcommand("generate", "write ranked lists for a split");
    ge->add_option("--data", gen.data_dir, "data directory")->required();
    ge->add_option("--checkpoint", gen.checkpoint, "policy checkpoint")->required();
    ge->add_option("--out", gen.out_file, "output recommendations JSONL")->required();
    ge->add_option("--k", gen.k, "list length");
    ge->add_option("--temperature", gen.temperature, "decode temperature");
    ge->add_option("--strategy", gen.strategy, "topk|sample");
    ge->add_option("--split", gen.split, "train|valid|test");
    ge->add_flag("--history-free", gen.history_free, "zero contexts");
    ge->add_option("--eps-floor", gen.eps_floor, "reward floor used at train time");
    ge->add_option("--seed", gen.seed, "sampling seed");

    // eval
    EvalArgs ev;
    auto* el = app.add_subcommand("eval", "score recommendations against a split");
    el->add_option("--data", ev.data_dir, "data directory")->required();
    el->add_option("--recs", ev.recs_file, "recommendations JSONL")->required();
    el->add_option("--out", ev.out_dir, "metrics output directory")->required();
    el->add_option("--k", ev.k, "evaluation cutoff K");
    el->add_option("--split", ev.split, "train|valid|test");

    // sweep
    SweepArgs sw;
    auto* sp = app.add_subcommand("sweep", "run train+generate+eval over a flag grid");
    add_train_flags(sp, sw.train);
    sp->add_option("--param", sw.param, "lambda|granularity|temperature|reward-variant|seed")
        ->required();
    sp->add_option("--values", sw.values, "comma-separated values")->delimiter(',')->required();
    sp->add_option("--k", sw.k, "evaluation cutoff K");
    sp->add_option("--temperature", sw.temperature, "decode temperature");
    sp->add_option("--strategy", sw.strategy, "topk|sample");
    sp->add_option("--split", sw.split, "train|valid|test");

    for (auto* sub : app.get_subcommands({})) {
        sub->set_config("--config", "",
                        "flat key = value config file (flags take precedence)");
        sub->allow_config_extras(CLI::config_extras_mode::ignore_all);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (mk->parsed()) {
            auto log = make_zipf_log(zipf);
            if (auto dir = fs::path(zipf_out).parent_path(); !dir.empty())
                fs::create_directories(dir);
            save_log_jsonl(log, zipf_out);
            std::cout << "wrote " << log.size() << " interactions to " << zipf_out << "\n";
            return kExitOk;
        }
        if (ing->parsed()) {
            LogFormat fmt;
            if (in_format == "csv") fmt = LogFormat::Csv;
            else if (in_format == "jsonl") fmt = LogFormat::Jsonl;
            else fail(ErrorCode::Config, "unknown format: " + in_format);
            IngestStats stats;
            auto records = ingest_interactions(in_path, fmt, &stats);
            std::optional<std::pair<int64_t, int64_t>> window;
            if (t0 && t1) window = std::make_pair(*t0, *t1);
            else if (t0 || t1) fail(ErrorCode::Config, "--t0 and --t1 must be given together");
            auto ds = preprocess(records, k_core, max_len, window);
            auto tok = tokenizer_from_name(in_tokenizer);
            auto cat = build_catalog(ds, tok);
            auto ga = assign_popularity_groups(cat, num_groups);
            save_data_dir(ds, cat, ga, {tok, max_len, k_core, num_groups}, in_out);
            std::cout << "ingested " << stats.rows_total << " rows (" << stats.rows_malformed
                      << " malformed skipped); train/valid/test = " << ds.train.size() << "/"
                      << ds.valid.size() << "/" << ds.test.size() << "; catalog "
                      << cat.items.size() << " items\n";
            return kExitOk;
        }
        if (tr->parsed()) return run_train(train_args);
        if (ge->parsed()) return run_generate(gen);
        if (el->parsed()) return run_eval(ev);
        if (sp->parsed()) return run_sweep(sw);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return (e.code() == ErrorCode::Parse || e.code() == ErrorCode::Config ||
                e.code() == ErrorCode::Io) ? kExitUsage : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
