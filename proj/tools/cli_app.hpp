#pragma once

// Command-line front end. `run` parses argv, validates every flag, reads the
// inputs, computes and only then writes outputs, so a rejected invocation
// leaves no files behind.
//
// Exit codes: 0 success, 1 invalid arguments or input, 2 numerical failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bpa/bpa.hpp"

namespace bpa::cli {

namespace fs = std::filesystem;

/// Relative paths land in $BPA_OUTPUT_DIR when it is set.
inline std::string output_path(const std::string& given, const std::string& fallback) {
    const fs::path name = given.empty() ? fs::path(fallback) : fs::path(given);
    if (name.is_absolute()) return name.string();
    const char* dir = std::getenv("BPA_OUTPUT_DIR");
    if (dir == nullptr || *dir == '\0') return name.string();
    fs::create_directories(dir);
    return (fs::path(dir) / name).string();
}

inline void require(bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
}

inline std::string report_text(const io::KeyValues& kv) {
    std::ostringstream s;
    kv.write(s);
    return s.str();
}

struct ChainFlags {
    int n_samples = kDefaults.n_samples;
    int burn_in = kDefaults.burn_in;
    double tune = kDefaults.tune;
    std::string prior = "paper";
    double tau_b = kDefaults.tau_b;
    double sigma_max = kDefaults.sigma_max;
    double empirical_sd = kDefaults.empirical_sd;
    std::string kernel = "gaussian";
    double dof = kDefaults.student_dof;
    std::optional<double> init_sigma;

    void add_to(CLI::App* app) {
        app->add_option("--n-samples", n_samples, "Total sweeps including burn-in")->capture_default_str();
        app->add_option("--burn-in", burn_in, "Sweeps discarded before retention")->capture_default_str();
        app->add_option("--tune", tune, "Half-width of the uniform proposal")->capture_default_str();
        app->add_option("--prior", prior, "paper | empirical")->capture_default_str();
        app->add_option("--tau-b", tau_b, "Precision of the dilation prior")->capture_default_str();
        app->add_option("--sigma-max", sigma_max, "Upper bound of the uniform sigma prior")->capture_default_str();
        app->add_option("--empirical-sd", empirical_sd, "Spread of the empirical prior")->capture_default_str();
        app->add_option("--kernel", kernel, "gaussian | student-t")->capture_default_str();
        app->add_option("--dof", dof, "Student-t degrees of freedom")->capture_default_str();
        app->add_option("--init-sigma", init_sigma, "Starting sigma");
    }

    void validate() const {
        require(n_samples >= 1, "--n-samples must be positive");
        require(burn_in >= 0 && burn_in < n_samples, "--burn-in must lie in [0, n-samples)");
        require(tune > 0.0 && std::isfinite(tune), "--tune must be positive");
        require(prior == "paper" || prior == "empirical", "--prior must be 'paper' or 'empirical'");
        require(tau_b > 0.0 && std::isfinite(tau_b), "--tau-b must be positive");
        require(sigma_max > 0.0 && std::isfinite(sigma_max), "--sigma-max must be positive");
        require(empirical_sd > 0.0 && std::isfinite(empirical_sd), "--empirical-sd must be positive");
        require(kernel == "gaussian" || kernel == "student-t", "--kernel must be 'gaussian' or 'student-t'");
        require(dof > 0.0 && std::isfinite(dof), "--dof must be positive");
        if (init_sigma) require(*init_sigma > 0.0 && *init_sigma <= sigma_max, "--init-sigma must lie in (0, sigma-max]");
    }

    LikelihoodKernel make_kernel() const {
        return kernel == "gaussian" ? LikelihoodKernel::gaussian() : LikelihoodKernel::student_t(dof);
    }

    /// Settings for the per-population fits behind compare / ppp.
    ChainSettings settings() const {
        ChainSettings s;
        s.n_samples = n_samples;
        s.burn_in = burn_in;
        s.tune = tune;
        s.prior = PriorSpec::paper(tau_b, sigma_max);
        if (prior == "empirical") {
            s.prior.kind = PriorKind::empirical;
            s.prior.empirical_sd = empirical_sd;
        }
        s.kernel = make_kernel();
        s.init_sigma = init_sigma;
        return s;
    }

    void describe(io::KeyValues& kv) const {
        kv.add("prior", prior).add("tau_b", tau_b).add("sigma_max", sigma_max);
        if (prior == "empirical") kv.add("empirical_sd", empirical_sd);
        kv.add("kernel", kernel);
        if (kernel == "student-t") kv.add("dof", dof);
    }
};

/// Two populations, either as two files or as labelled groups of one file.
struct PopulationFlags {
    std::string file_a, file_b, in, groups, group_a, group_b;

    void add_to(CLI::App* app) {
        app->add_option("--a", file_a, "Landmark file of population a");
        app->add_option("--b", file_b, "Landmark file of population b");
        app->add_option("--in", in, "Landmark file holding both populations");
        app->add_option("--groups", groups, "Group label per specimen of --in");
        app->add_option("--group-a", group_a, "Label of population a in --groups");
        app->add_option("--group-b", group_b, "Label of population b in --groups");
    }

    void validate() const {
        const bool pair = !file_a.empty() || !file_b.empty();
        const bool grouped = !in.empty() || !groups.empty() || !group_a.empty() || !group_b.empty();
        require(pair != grouped, "give either --a/--b or --in/--groups/--group-a/--group-b");
        if (pair) require(!file_a.empty() && !file_b.empty(), "both --a and --b are required");
        if (grouped)
            require(!in.empty() && !groups.empty() && !group_a.empty() && !group_b.empty(),
                    "--in, --groups, --group-a and --group-b are all required");
        if (grouped) require(group_a != group_b, "--group-a and --group-b must differ");
    }

    std::pair<std::string, std::string> names() const {
        return file_a.empty() ? std::pair{group_a, group_b} : std::pair{file_a, file_b};
    }

    std::pair<ObjectSet, ObjectSet> load() const {
        if (!file_a.empty()) return {io::read_landmarks(file_a).objects, io::read_landmarks(file_b).objects};
        const ObjectSet all = io::read_landmarks(in).objects;
        const auto labels = read_groups(groups);
        if (static_cast<int>(labels.size()) != all.size())
            throw ValidationError("--groups has " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(all.size()) + " specimens");
        return {select(all, labels, group_a), select(all, labels, group_b)};
    }

    /// One label per specimen, either bare or as `specimen,label` rows; an
    /// optional header line starting with "specimen" or "group" is skipped.
    static std::vector<std::string> read_groups(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw io::FormatError("cannot open: " + path);
        std::map<long long, std::string> indexed;
        std::vector<std::string> bare;
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            const std::string t = io::trim(line);
            if (t.empty()) continue;
            if (first && (t.rfind("specimen", 0) == 0 || t == "group")) {
                first = false;
                continue;
            }
            first = false;
            const auto f = io::split_csv(t);
            if (f.size() == 1) {
                bare.push_back(io::trim(f[0]));
            } else if (f.size() == 2) {
                const long long k = io::parse_int(f[0]);
                if (!indexed.emplace(k, io::trim(f[1])).second) throw io::FormatError("duplicate specimen in groups file");
            } else {
                throw io::FormatError("groups rows must be 'label' or 'specimen,label'");
            }
        }
        if (!bare.empty() && !indexed.empty()) throw io::FormatError("groups file mixes bare and indexed rows");
        if (bare.empty()) {
            long long expected = 1;
            for (auto& [k, v] : indexed) {
                if (k != expected++) throw io::FormatError("groups file must list specimens 1..n");
                bare.push_back(std::move(v));
            }
        }
        return bare;
    }

    static ObjectSet select(const ObjectSet& all, const std::vector<std::string>& labels, const std::string& group) {
        std::vector<Matrix> chosen;
        for (std::size_t k = 0; k < labels.size(); ++k)
            if (labels[k] == group) chosen.push_back(all[k]);
        if (chosen.empty()) throw ValidationError("no specimens labelled '" + group + "'");
        return ObjectSet(std::move(chosen), all.space());
    }
};

inline TransformMode parse_mode(const std::string& s) {
    if (s == "shared") return TransformMode::shared;
    if (s == "per-object") return TransformMode::per_object;
    if (s == "variance-only") return TransformMode::variance_only;
    throw ValidationError("--mode must be shared, per-object or variance-only");
}

inline void add_transform(io::KeyValues& kv, const ParameterState& s, const std::string& suffix = "") {
    for (int j = 0; j < s.dim(); ++j) kv.add("c" + std::to_string(j + 1) + suffix, s.c(j));
    kv.add("b" + suffix, s.b);
    if (s.dim() == 2) {
        kv.add("theta" + suffix, s.theta(0));
    } else {
        kv.add("thetax" + suffix, s.theta(0)).add("thetay" + suffix, s.theta(1)).add("thetaz" + suffix, s.theta(2));
    }
}

inline void add_configuration(io::KeyValues& kv, const std::string& prefix, const Matrix& m) {
    static constexpr const char* axis[] = {"x", "y", "z"};
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            kv.add(prefix + "_" + std::to_string(i + 1) + "_" + axis[j], m(i, j));
}

class App {
public:
    App(std::ostream& out, std::ostream& err) : out_(out), err_(err) { build(); }

    int run(std::vector<std::string> args) {
        std::reverse(args.begin(), args.end());
        try {
            app_.parse(args);
        } catch (const CLI::CallForHelp&) {
            out_ << app_.help();
            return 0;
        } catch (const CLI::CallForAllHelp&) {
            out_ << app_.help("", CLI::AppFormatMode::All);
            return 0;
        } catch (const CLI::ParseError& e) {
            err_ << "error: " << e.what() << "\n\n" << usage();
            return 1;
        }
        try {
            dispatch();
            return 0;
        } catch (const ValidationError& e) {
            err_ << "error: " << e.what() << '\n';
            return 1;
        } catch (const fs::filesystem_error& e) {
            err_ << "error: " << e.what() << '\n';
            return 1;
        } catch (const NumericalError& e) {
            err_ << "numerical failure: " << e.what() << '\n';
            return 2;
        } catch (const std::exception& e) {
            err_ << "failure: " << e.what() << '\n';
            return 2;
        }
    }

private:
    std::string usage() const {
        const auto* sub = app_.get_subcommands().empty() ? nullptr : app_.get_subcommands().front();
        return sub != nullptr ? sub->help() : app_.help();
    }

    void build() {
        app_.name("bpa");
        app_.description("Bayesian Procrustes analysis of landmark data");
        app_.require_subcommand(1);

        auto* sim = app_.add_subcommand("simulate", "Simulate a landmark population");
        sim->add_option("--template", sim_.tpl, "convex-quad | concave-quad | triangle | random-triangles")->required();
        sim->add_option("--n", sim_.n, "Number of specimens")->required();
        sim->add_option("--sigma", sim_.sigma, "Landmark noise SD")->capture_default_str();
        sim->add_option("--flip", sim_.flip, "Specimen (1-based) given reversed vertex order; random-triangles only");
        sim->add_option("--jitter-c", sim_.jitter_c, "Translation range LO,HI per axis")->expected(2)->delimiter(',');
        sim->add_option("--jitter-b", sim_.jitter_b, "Dilation range LO,HI")->expected(2)->delimiter(',');
        sim->add_option("--jitter-theta", sim_.jitter_theta, "Angle range LO,HI per angle")->expected(2)->delimiter(',');
        sim->add_option("--label", sim_.label, "Label stored in the file header");
        add_seed(sim);
        add_out(sim);

        auto* pre = app_.add_subcommand("preshape", "Convert configurations to pre-shapes");
        pre->add_option("--in", in_, "Landmark file")->required();
        add_out(pre);

        auto* fit = app_.add_subcommand("fit", "Classical full Procrustes fit onto the mean shape");
        fit->add_option("--in", in_, "Landmark file")->required();
        add_out(fit);

        auto* sample = app_.add_subcommand("sample", "Metropolis posterior chain");
        sample->add_option("--in", in_, "Landmark file")->required();
        chain_.add_to(sample);
        sample->add_option("--chains", chains_, "Independent chains merged in order")->capture_default_str();
        sample->add_flag("--lazy", lazy_, "Hold each update with probability 1/2");
        sample->add_option("--mode", mode_, "shared | per-object | variance-only")->capture_default_str();
        add_seed(sample);
        add_out(sample);

        auto* gibbs = app_.add_subcommand("gibbs", "Exact sigma draws for the variance-only model");
        gibbs->add_option("--in", in_, "Landmark file")->required();
        gibbs->add_option("--n-samples", chain_.n_samples, "Total draws including burn-in")->capture_default_str();
        gibbs->add_option("--burn-in", chain_.burn_in, "Draws discarded")->capture_default_str();
        add_seed(gibbs);
        add_out(gibbs);

        auto* est = app_.add_subcommand("estimate", "Posterior-mean transform and fitted configuration");
        est->add_option("--chain", chain_file_, "Chain CSV")->required();
        est->add_option("--in", in_, "Landmark file the chain was sampled from")->required();
        add_out(est);

        auto* dens = app_.add_subcommand("density", "Kernel density grid of one or two chain columns");
        dens->add_option("--chain", chain_file_, "Chain CSV")->required();
        dens->add_option("--x", x_col_, "Column on the x axis")->capture_default_str();
        dens->add_option("--y", y_col_, "Column on the y axis (joint grid)");
        dens->add_option("--grid", grid_, "Grid points per axis")->capture_default_str();
        add_out(dens);

        auto* cmp = app_.add_subcommand("compare", "KL-divergence test of variability between two populations");
        pops_.add_to(cmp);
        chain_.add_to(cmp);
        cmp->add_option("--epsilon", epsilon_, "Decision threshold");
        cmp->add_flag("--calibrate", calibrate_, "Derive epsilon from split-half null statistics");
        cmp->add_option("--splits", splits_, "Random splits per population when calibrating")->capture_default_str();
        cmp->add_option("--p-value", replicates_, "Attach a predictive p-value from this many replicates");
        cmp->add_option("--predictive", source_, "posterior | prior")->capture_default_str();
        add_seed(cmp);
        add_out(cmp);

        auto* ppp = app_.add_subcommand("ppp", "Predictive p-value");
        ppp->add_option("--observed", observed_, "Observed statistic (with --draws)");
        ppp->add_option("--draws", draws_file_, "Reference statistics, one per line");
        pops_.add_to(ppp);
        chain_.add_to(ppp);
        ppp->add_option("--replicates", replicates_, "Replicate populations (without --draws)");
        ppp->add_option("--predictive", source_, "posterior | prior")->capture_default_str();
        add_seed(ppp);
        add_out(ppp);

        auto* bf = app_.add_subcommand("bf", "Monte Carlo Bayes factor, common variance against mixture");
        pops_.add_to(bf);
        bf->add_option("--n-mc", n_mc_, "Prior draws per marginal")->capture_default_str();
        bf->add_option("--tau-b", chain_.tau_b, "Precision of the dilation prior")->capture_default_str();
        bf->add_option("--sigma-max", chain_.sigma_max, "Upper bound of the uniform sigma prior")->capture_default_str();
        bf->add_option("--weights", weights_, "half | dirichlet")->capture_default_str();
        add_seed(bf);
        add_out(bf);

        for (auto* sub : app_.get_subcommands({})) commands_[sub->get_name()] = sub;
    }

    void add_seed(CLI::App* sub) { sub->add_option("--seed", seed_, "Random seed")->capture_default_str(); }
    void add_out(CLI::App* sub) { sub->add_option("--out", out_file_, "Output path"); }

    bool used(const std::string& name) const { return commands_.at(name)->parsed(); }

    void dispatch() {
        if (used("simulate")) return simulate();
        if (used("preshape")) return preshape();
        if (used("fit")) return fit();
        if (used("sample")) return sample();
        if (used("gibbs")) return gibbs();
        if (used("estimate")) return estimate();
        if (used("density")) return density();
        if (used("compare")) return compare();
        if (used("ppp")) return ppp();
        if (used("bf")) return bayes_factor();
    }

    void wrote(const std::string& path) { out_ << "wrote " << path << '\n'; }

    void report(const io::KeyValues& kv) {
        const std::string text = report_text(kv);
        if (!out_file_.empty()) {
            const std::string path = output_path(out_file_, out_file_);
            io::write_text(path, text);
        }
        out_ << text;
    }

    void simulate() {
        require(sim_.n >= 1, "--n must be at least 1");
        require(sim_.sigma >= 0.0 && std::isfinite(sim_.sigma), "--sigma must be non-negative");
        const bool triangles = sim_.tpl == "random-triangles";
        std::optional<ShapeTemplate> tpl;
        if (!triangles) tpl = ShapeTemplate::named(sim_.tpl);
        std::optional<int> flip;
        if (sim_.flip) {
            require(triangles, "--flip applies to random-triangles only");
            require(*sim_.flip >= 1 && *sim_.flip <= sim_.n, "--flip must name a specimen in 1..n");
            flip = *sim_.flip - 1;
        }
        std::optional<TransformJitter> jitter;
        if (!sim_.jitter_c.empty() || !sim_.jitter_b.empty() || !sim_.jitter_theta.empty()) {
            require(!triangles, "jitter does not apply to random-triangles");
            const int d = static_cast<int>(tpl->base_points().cols());
            TransformJitter j;
            const Range c = sim_.jitter_c.empty() ? Range{} : Range{sim_.jitter_c[0], sim_.jitter_c[1]};
            const Range t = sim_.jitter_theta.empty() ? Range{} : Range{sim_.jitter_theta[0], sim_.jitter_theta[1]};
            j.c.assign(static_cast<std::size_t>(d), c);
            j.theta.assign(static_cast<std::size_t>(rotation_angle_count(d)), t);
            if (!sim_.jitter_b.empty()) j.b = Range{sim_.jitter_b[0], sim_.jitter_b[1]};
            j.validate(d);
            jitter = j;
        }
        const ObjectSet data = triangles ? random_triangles(sim_.n, seed_, flip)
                                         : simulate_objects(*tpl, sim_.n, sim_.sigma, jitter, seed_);
        const std::string path = output_path(out_file_, "objects.lmk");
        io::write_landmarks(path, data, sim_.label.empty() ? sim_.tpl : sim_.label);
        wrote(path);
    }

    void preshape() {
        const auto file = io::read_landmarks(in_);
        require(file.objects.space() == Space::configuration, "input is already in pre-shape space");
        const ObjectSet pre = to_preshape(file.objects);
        const std::string path = output_path(out_file_, "preshape.lmk");
        io::write_landmarks(path, pre, file.label);
        wrote(path);
    }

    void fit() {
        const auto file = io::read_landmarks(in_);
        const ObjectSet& data = file.objects;
        const auto mean = mean_shape(data);
        const Matrix reg = registration_object(data);
        const FitResult shared = shared_fit(data, reg);
        double sse = 0.0, distance = 0.0;
        const Matrix fitted = apply_transform(reg, shared.transform);
        const ObjectSet pre = to_preshape(data);
        for (int k = 0; k < data.size(); ++k) {
            sse += (data[static_cast<std::size_t>(k)] - fitted).squaredNorm();
            distance += full_procrustes_distance(mean.shape, PreShape(pre[static_cast<std::size_t>(k)], mean.shape.source_landmarks()));
        }
        io::KeyValues kv;
        kv.add("n", data.size()).add("p", data.landmarks()).add("d", data.dim()).add("space", to_string(data.space()));
        kv.add("mean_shape_iterations", mean.iterations).add("mean_shape_converged", mean.converged);
        add_transform(kv, ParameterState::from(shared.transform, 1.0));
        kv.add("sse", sse)
            .add("residual_rms", std::sqrt(sse / (static_cast<double>(data.size()) * static_cast<double>(fitted.size()))))
            .add("mean_procrustes_distance", distance / data.size());
        add_configuration(kv, "registration", reg);
        report(kv);
    }

    void sample() {
        chain_.validate();
        const double init_sigma = chain_.init_sigma.value_or(kDefaults.init_sigma);
        require(init_sigma <= chain_.sigma_max, "the starting sigma exceeds --sigma-max; set --init-sigma");
        require(chains_ >= 1, "--chains must be positive");
        const TransformMode mode = parse_mode(mode_);
        const auto file = io::read_landmarks(in_);
        const ObjectSet& data = file.objects;
        const Matrix reg = registration_object(data);
        const PriorSpec prior = chain_.prior == "paper"
                                    ? PriorSpec::paper(chain_.tau_b, chain_.sigma_max)
                                    : make_empirical_prior(data, reg, mode, chain_.empirical_sd, chain_.sigma_max);
        MetropolisOptions options;
        options.mode = mode;
        options.lazy = lazy_;
        const ParameterState init = mode == TransformMode::variance_only
                                        ? ParameterState::identity(data.dim(), init_sigma)
                                        : classical_start(data, reg, init_sigma);
        if (mode == TransformMode::per_object)
            for (const auto& f : specimen_fits(data, reg)) options.per_object_init.push_back(ParameterState::from(f.transform, init_sigma));
        const auto chain = metropolis_chains(data, reg, init, prior, chain_.make_kernel(), chain_.n_samples, chain_.burn_in,
                                             chain_.tune, seed_, chains_, options);
        io::KeyValues extra;
        chain_.describe(extra);
        extra.add("init_sigma", init_sigma).add("space", to_string(data.space())).add("n", data.size());
        const std::string path = output_path(out_file_, "chain.csv");
        io::write_chain(path, chain, extra);
        wrote(path);
    }

    void gibbs() {
        require(chain_.n_samples >= 1, "--n-samples must be positive");
        require(chain_.burn_in >= 0 && chain_.burn_in < chain_.n_samples, "--burn-in must lie in [0, n-samples)");
        const auto file = io::read_landmarks(in_);
        const ObjectSet pre = to_preshape(file.objects);
        const auto chain = gibbs_sigma_run(pre, mean_shape(pre).shape, chain_.n_samples, chain_.burn_in, seed_);
        io::KeyValues extra;
        extra.add("space", "preshape").add("n", pre.size());
        const std::string path = output_path(out_file_, "gibbs.csv");
        io::write_chain(path, chain, extra);
        wrote(path);
    }

    void estimate() {
        const PosteriorChain chain = io::read_chain(chain_file_);
        ObjectSet data = io::read_landmarks(in_).objects;
        std::ifstream meta_in(io::meta_path(chain_file_), std::ios::binary);
        if (meta_in) {
            const auto meta = io::KeyValues::read(meta_in);
            if (meta.get("space") == std::optional<std::string>("preshape") && data.space() == Space::configuration)
                data = to_preshape(data);
        }
        require(data.dim() == chain.dim, "chain and landmark file differ in dimension");
        const Matrix reg = registration_object(data);
        io::KeyValues kv;
        kv.add("retained", static_cast<long long>(chain.rows())).add("mode", to_string(chain.mode));
        if (chain.mode == TransformMode::per_object) {
            const auto all = bfpf_estimate_objects(chain, reg);
            require(static_cast<int>(all.size()) == data.size(), "chain and landmark file differ in specimen count");
            kv.add("sigma", all.front().parameters.sigma);
            for (std::size_t k = 0; k < all.size(); ++k) add_transform(kv, all[k].parameters, "_" + std::to_string(k + 1));
        } else {
            const auto est = bfpf_estimate(chain, reg);
            kv.add("sigma", est.parameters.sigma);
            add_transform(kv, est.parameters);
            add_configuration(kv, "fitted", est.fitted);
        }
        report(kv);
    }

    void density() {
        require(grid_ >= 8, "--grid must be at least 8");
        const PosteriorChain chain = io::read_chain(chain_file_);
        const auto grid = density_grid(chain, x_col_, y_col_.empty() ? std::nullopt : std::optional(y_col_), grid_);
        const std::string path = output_path(out_file_, "density.csv");
        io::write_density(path, grid);
        wrote(path);
    }

    void validate_source() const { require(source_ == "posterior" || source_ == "prior", "--predictive must be 'posterior' or 'prior'"); }

    void compare() {
        pops_.validate();
        chain_.validate();
        validate_source();
        require(epsilon_.has_value() != calibrate_, "give exactly one of --epsilon and --calibrate");
        if (epsilon_) require(*epsilon_ > 0.0 && std::isfinite(*epsilon_), "--epsilon must be positive");
        if (calibrate_) require(splits_ >= 1, "--splits must be positive");
        if (replicates_) require(*replicates_ >= 100, "--p-value needs at least 100 replicates");
        const auto [a, b] = pops_.load();
        const ChainSettings settings = chain_.settings();
        const double eps = calibrate_ ? calibrate_epsilon(a, b, settings, splits_, derive_seed(seed_, 7)) : *epsilon_;
        require(eps > 0.0, "calibrated epsilon is zero; the split-half statistics carry no spread");
        TaxaTestOptions opts;
        opts.seed = seed_;
        opts.p_value_replicates = replicates_;
        opts.source = source_ == "posterior" ? PredictiveSource::posterior : PredictiveSource::prior;
        const TestResult r = taxa_test(a, b, eps, settings, opts);
        const auto [name_a, name_b] = pops_.names();
        io::KeyValues kv;
        kv.add("statistic", r.statistic)
            .add("epsilon", r.threshold)
            .add("epsilon_mode", calibrate_ ? "calibrated" : "fixed")
            .add("decision", to_string(r.decision));
        if (r.p_value) kv.add("p_value", *r.p_value).add("predictive", source_);
        kv.add("population_a", name_a).add("population_b", name_b);
        kv.add("sigma_a", r.sigma_a).add("sigma_b", r.sigma_b).add("n_a", r.n_a).add("n_b", r.n_b).add("seed", r.seed);
        chain_.describe(kv);
        kv.add("n_samples", chain_.n_samples).add("burn_in", chain_.burn_in).add("tune", chain_.tune);
        report(kv);
    }

    void ppp() {
        validate_source();
        io::KeyValues kv;
        if (!draws_file_.empty()) {
            require(observed_.has_value(), "--draws needs --observed");
            const auto draws = io::read_values(draws_file_);
            kv.add("observed", *observed_).add("draws", draws.size()).add("p_value", predictive_p_value(*observed_, draws));
            return report(kv);
        }
        require(!observed_, "--observed needs --draws");
        pops_.validate();
        chain_.validate();
        const int replicates = replicates_.value_or(100);
        require(replicates >= 100, "--replicates must be at least 100");
        const auto [a, b] = pops_.load();
        TaxaTestOptions opts;
        opts.seed = seed_;
        opts.p_value_replicates = replicates;
        opts.source = source_ == "posterior" ? PredictiveSource::posterior : PredictiveSource::prior;
        const TestResult r = taxa_test(a, b, std::numeric_limits<double>::max(), chain_.settings(), opts);
        kv.add("statistic", r.statistic).add("p_value", *r.p_value).add("predictive", source_).add("replicates", replicates);
        kv.add("n_a", r.n_a).add("n_b", r.n_b).add("seed", r.seed);
        report(kv);
    }

    void bayes_factor() {
        pops_.validate();
        require(n_mc_ >= 1000, "--n-mc must be at least 1000");
        require(weights_ == "half" || weights_ == "dirichlet", "--weights must be 'half' or 'dirichlet'");
        const PriorSpec prior = PriorSpec::paper(chain_.tau_b, chain_.sigma_max);
        prior.validate();
        const auto [a, b] = pops_.load();
        BayesFactorOptions opts;
        opts.weights = weights_ == "half" ? MixtureWeights::fixed_half : MixtureWeights::dirichlet;
        const auto r = bayes_factor_mc(a, b, prior, n_mc_, seed_, opts);
        io::KeyValues kv;
        kv.add("log_bayes_factor", r.log_bayes_factor)
            .add("bayes_factor", r.bayes_factor)
            .add("log_marginal_common", r.log_marginal_numerator)
            .add("log_marginal_mixture", r.log_marginal_denominator)
            .add("relative_se", r.relative_se)
            .add("high_variance", r.high_variance)
            .add("n_mc", r.n_mc)
            .add("weights", weights_)
            .add("seed", seed_);
        report(kv);
    }

    struct SimulateFlags {
        std::string tpl;
        int n = 0;
        double sigma = 0.0;
        std::optional<int> flip;
        std::vector<double> jitter_c, jitter_b, jitter_theta;
        std::string label;
    };

    std::ostream& out_;
    std::ostream& err_;
    CLI::App app_;
    std::map<std::string, CLI::App*> commands_;

    SimulateFlags sim_;
    ChainFlags chain_;
    PopulationFlags pops_;
    std::uint64_t seed_ = 1;
    std::string in_, out_file_, chain_file_, draws_file_;
    int chains_ = 1;
    bool lazy_ = false;
    std::string mode_ = "shared";
    std::string x_col_ = "sigma", y_col_;
    int grid_ = 64;
    std::optional<double> epsilon_, observed_;
    bool calibrate_ = false;
    int splits_ = 20;
    std::optional<int> replicates_;
    std::string source_ = "posterior";
    int n_mc_ = 100000;
    std::string weights_ = "half";
};

/// argv without the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    App app(out, err);
    return app.run(args);
}

}  // namespace bpa::cli
