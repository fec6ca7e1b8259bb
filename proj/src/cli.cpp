#include "convlogic/cli.hpp"

#include "convlogic/dataset_io.hpp"
#include "convlogic/evaluate.hpp"
#include "convlogic/induction.hpp"
#include "convlogic/inspect.hpp"
#include "convlogic/program.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace convlogic::cli {

namespace {

std::vector<std::string> split_names(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    for (const auto& item : raw) {
        std::stringstream ss(item);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) out.push_back(part);
    }
    return out;
}

// "a..b" selects every manifest layer from a to b; plain names are taken as listed.
std::vector<std::string> resolve_layers(const Dataset& d, const std::vector<std::string>& raw) {
    const auto names = split_names(raw);
    if (names.size() == 1) {
        const auto dots = names[0].find("..");
        if (dots != std::string::npos) {
            const std::size_t from = d.layer_position(names[0].substr(0, dots));
            const std::size_t to = d.layer_position(names[0].substr(dots + 2));
            if (to < from) throw std::invalid_argument("layer range runs backwards");
            std::vector<std::string> out;
            for (std::size_t l = from; l <= to; ++l) out.push_back(d.manifest.layers[l].name);
            return out;
        }
    }
    return names;
}

void write_text(const std::string& text, const std::string& path, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << text;
    f.flush();
    if (!f) throw IoError("write failed for " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string join(const std::vector<std::string>& v, const char* sep = ",") {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
    return s;
}

std::string metrics_report(const SplitMetrics& m) {
    std::ostringstream out;
    out << "split " << m.split << "\nsamples " << m.samples << "\naccuracy " << format_fraction(m.accuracy, 3)
        << "\nfidelity " << format_fraction(m.fidelity, 3) << "\nabstain " << format_fraction(m.abstain_rate, 3)
        << "\nconflict " << format_fraction(m.conflict_rate, 3) << "\nteacher_accuracy "
        << format_fraction(m.teacher_accuracy, 3) << '\n';
    return out.str();
}

std::string stats_report(const ProgramStats& s) {
    std::ostringstream out;
    out << "rules " << s.n_rules << "\nvars " << s.n_vars << "\nvars_polarity " << s.n_vars_polarity << "\nsize "
        << s.size << '\n';
    return out.str();
}

} // namespace

std::vector<std::size_t> parse_int_range(const std::string& text) {
    std::vector<std::size_t> out;
    const auto dots = text.find("..");
    try {
        if (dots != std::string::npos) {
            const std::size_t a = std::stoul(text.substr(0, dots));
            const std::size_t b = std::stoul(text.substr(dots + 2));
            if (b < a) throw std::invalid_argument("range runs backwards");
            for (std::size_t v = a; v <= b; ++v) out.push_back(v);
        } else {
            for (const auto& part : split_names({text})) out.push_back(std::stoul(part));
        }
    } catch (const std::logic_error&) {
        throw std::invalid_argument("bad integer list '" + text + "'");
    }
    return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Approximate a CNN's kernels with a layered logic program", "convlogic"};
    app.require_subcommand(1);
    unsigned jobs = default_jobs();
    app.add_option("--jobs,-j", jobs, "Worker threads (default: $CONVLOGIC_JOBS or 1)")->check(CLI::PositiveNumber);

    std::string dataset_dir, program_path, out_path, json_path, labels_path, config_path;
    std::string lep, layer;
    std::vector<std::string> layers_raw, leps_raw, splits_raw;
    std::size_t depth = 5;
    std::optional<double> alpha;
    bool all_kernels = false, no_simplify = false, chain = false, table = false;
    std::size_t sample = 0, m = 10;
    KernelIndex kernel = 0;
    std::string depths_raw = "1..5";

    auto* extract = app.add_subcommand("extract", "Induce a program from a dataset");
    extract->add_option("--dataset", dataset_dir, "Dataset directory")->required();
    extract->add_option("--lep", lep, "Entry layer");
    extract->add_option("--layers", layers_raw, "Layers from the entry layer to output (list or a..b)");
    extract->add_option("--depth", depth, "Tree depth d")->check(CLI::PositiveNumber);
    extract->add_option("--alpha", alpha, "Stopping fraction (default 0.01, or 0.1 for chained layers)")
        ->check(CLI::Range(0.0, 1.0));
    extract->add_flag("--all-kernels", all_kernels, "Induce rules for every intermediate kernel");
    extract->add_flag("--no-simplify", no_simplify, "Keep the raw tree rules");
    extract->add_option("--out", out_path, "Program file (default stdout)");
    extract->add_option("--json", json_path, "Also write a JSON export");

    auto* simplify_cmd = app.add_subcommand("simplify", "Merge redundant rules of a program");
    simplify_cmd->add_option("--program", program_path)->required();
    simplify_cmd->add_option("--out", out_path, "Output file (default stdout)");

    auto* evaluate = app.add_subcommand("evaluate", "Accuracy and fidelity of a program");
    evaluate->add_option("--dataset", dataset_dir)->required();
    evaluate->add_option("--program", program_path)->required();
    evaluate->add_option("--split", splits_raw, "Split(s) to evaluate (default train,val,test)");

    auto* infer_cmd = app.add_subcommand("infer", "Explain the program's decision for one sample");
    infer_cmd->add_option("--dataset", dataset_dir)->required();
    infer_cmd->add_option("--program", program_path)->required();
    infer_cmd->add_option("--sample", sample)->required();
    infer_cmd->add_option("--labels", labels_path, "Kernel label map");

    auto* sweep = app.add_subcommand("sweep", "Grid of entry layers and depths");
    sweep->add_option("--dataset", dataset_dir)->required();
    sweep->add_option("--leps", leps_raw, "Entry layers")->required();
    sweep->add_option("--depths", depths_raw, "Depths, e.g. 1..5 or 1,3,5");
    sweep->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0));
    sweep->add_flag("--chain", chain, "Chain every layer from the entry layer to the deepest one");
    sweep->add_flag("--all-kernels", all_kernels);
    sweep->add_option("--splits", splits_raw, "Splits to evaluate (default train,val,test)");
    sweep->add_option("--out", out_path, "CSV file (default stdout)");
    sweep->add_flag("--table", table, "Print a summary table to stdout");

    auto* inspect_cmd = app.add_subcommand("inspect", "Strongest-activating training samples of a kernel");
    inspect_cmd->add_option("--dataset", dataset_dir)->required();
    inspect_cmd->add_option("--layer", layer)->required();
    inspect_cmd->add_option("--kernel", kernel)->required();
    inspect_cmd->add_option("--m", m, "Profile length")->check(CLI::PositiveNumber);

    auto* render = app.add_subcommand("render", "Print a program with kernel labels");
    render->add_option("--program", program_path)->required();
    render->add_option("--labels", labels_path)->required();

    auto* synth = app.add_subcommand("synth", "Write a synthetic planted-rule dataset");
    synth->add_option("--config", config_path, "JSON synth config")->required();
    synth->add_option("--out", out_path, "Output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kUsage;
    }

    try {
        const auto echo = [&](const std::string& line) { err << "# convlogic " << line << " jobs=" << jobs << '\n'; };
        const auto splits = splits_raw.empty() ? std::vector<std::string>{"train", "val", "test"} : split_names(splits_raw);

        if (*extract) {
            const Dataset d = load_dataset(dataset_dir);
            auto layers = resolve_layers(d, layers_raw);
            if (layers.empty()) {
                if (lep.empty()) throw std::invalid_argument("give --lep or --layers");
                layers = {lep, std::string(kOutputLayer)};
            }
            if (!lep.empty() && layers.front() != lep)
                throw std::invalid_argument("--lep must be the first of --layers");
            ExtractionConfig cfg{layers, {depth, alpha.value_or(default_alpha(layers.size() - 1)), !all_kernels}};
            echo("extract dataset=" + dataset_dir + " layers=" + join(layers) + " depth=" + std::to_string(depth) +
                 " alpha=" + format_real(cfg.params.alpha) + " demand_driven=" + (all_kernels ? "false" : "true") +
                 " simplify=" + (no_simplify ? "false" : "true"));
            Program p = extract_program(d, cfg, jobs);
            if (!no_simplify) p = simplify(p);
            write_text(serialise(p), out_path, out);
            if (!json_path.empty()) write_text(to_json(p), json_path, out);
            err << stats_report(program_stats(p));
        } else if (*simplify_cmd) {
            echo("simplify program=" + program_path);
            const Program p = simplify(load_program(program_path));
            write_text(serialise(p), out_path, out);
        } else if (*evaluate) {
            echo("evaluate dataset=" + dataset_dir + " program=" + program_path + " splits=" + join(splits));
            const Dataset d = load_dataset(dataset_dir);
            const Program p = load_program(program_path);
            for (const auto& s : splits) out << metrics_report(evaluate_split(p, d, s, jobs));
            out << stats_report(program_stats(p));
        } else if (*infer_cmd) {
            echo("infer dataset=" + dataset_dir + " program=" + program_path + " sample=" + std::to_string(sample));
            const Dataset d = load_dataset(dataset_dir);
            const Program p = load_program(program_path);
            const LabelMap labels = labels_path.empty() ? LabelMap{} : LabelMap::load(labels_path);
            out << explain_sample(p, d, static_cast<SampleIndex>(sample), labels);
        } else if (*sweep) {
            SweepSpec spec;
            spec.leps = split_names(leps_raw);
            spec.depths = parse_int_range(depths_raw);
            spec.alpha = alpha;
            spec.chain = chain;
            spec.demand_driven = !all_kernels;
            spec.splits = splits;
            echo("sweep dataset=" + dataset_dir + " leps=" + join(spec.leps) + " depths=" + depths_raw +
                 " alpha=" + (alpha ? format_real(*alpha) : std::string("default")) +
                 " chain=" + (chain ? "true" : "false") + " demand_driven=" + (all_kernels ? "false" : "true") +
                 " splits=" + join(splits));
            const Dataset d = load_dataset(dataset_dir);
            const SweepGrid grid = run_sweep(d, spec, jobs);
            write_text(sweep_csv(grid), out_path, out);
            if (table) out << sweep_table(grid);
            for (const auto& cell : grid.cells)
                if (cell.error) err << "cell " << cell.lep << " depth " << cell.depth << " failed: " << *cell.error << '\n';
        } else if (*inspect_cmd) {
            echo("inspect dataset=" + dataset_dir + " layer=" + layer + " kernel=" + std::to_string(kernel) +
                 " m=" + std::to_string(m));
            const Dataset d = load_dataset(dataset_dir);
            out << format_profile(top_m(d, layer, kernel, m));
        } else if (*render) {
            echo("render program=" + program_path + " labels=" + labels_path);
            out << render_rules(load_program(program_path), LabelMap::load(labels_path));
        } else if (*synth) {
            const SynthConfig cfg = parse_synth_config(read_text(config_path));
            echo("synth config=" + config_path + " seed=" + std::to_string(cfg.seed) + " out=" + out_path);
            save_dataset(generate_synthetic(cfg), out_path);
        }
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kInternal;
    }
    return kOk;
}

} // namespace convlogic::cli
