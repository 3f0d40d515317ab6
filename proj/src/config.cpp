#include "ugda/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ugda/errors.hpp"

namespace ugda {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

const std::vector<ConfigEntry>& RunConfig::registry() {
    static const std::vector<ConfigEntry> entries = {
        {"seed", "1", "Global RNG seed; every stream in a run derives from it."},
        {"output_dir", "runs/latest", "Directory for metrics.csv, checkpoints and summaries."},

        {"backbone.name", "digits-convnet", "Architecture: digits-convnet | mlp-small."},
        {"backbone.input_channels", "3", "Image channels fed to the first conv layer."},
        {"backbone.image_size", "32", "Square input resolution; loaders resize to this."},
        {"backbone.conv1_channels", "64", "Channels of conv layer 1 (5x5)."},
        {"backbone.conv2_channels", "128", "Channels of conv layer 2 (5x5)."},
        {"backbone.kernel", "5", "Conv kernel size (square, valid padding)."},
        {"backbone.fc_width", "1024", "Width of the two fully-connected layers."},
        {"backbone.classes", "10", "Number of output classes."},
        {"backbone.mlp_input_dim", "8", "mlp-small: input feature dimension."},
        {"backbone.mlp_hidden", "64", "mlp-small: width of the two hidden layers."},

        {"perturb.mode", "full",
         "Feature-perturbation distribution: full | deterministic | random_mu | random_sigma | "
         "random_gaussian."},
        {"perturb.init_log_sigma", "0", "Initial log standard deviation of the perturbation heads."},

        {"mixup.mode", "learnable", "Feature/label interpolation: learnable | random | off."},
        {"mixup.rho", "0.9", "Label-smoothing mass kept on the true class; must be in (1/classes, 1)."},

        {"augment.mode", "uncertainty",
         "Domain synthesis: uncertainty (learned feature perturbations) | mada (worst-case input "
         "ascent with a reconstruction guard)."},

        {"ada.beta", "1", "Weight of the embedding-distance constraint inside the adversarial objective."},
        {"ada.ascent_steps", "5", "Gradient-ascent steps when fitting an adversarial domain."},
        {"ada.ascent_lr", "0.05", "Step size of that ascent."},
        {"ada.attack_every", "1", "Run the adversarial ascent every N training iterations."},
        {"ada.attack_mixup", "true", "Whether the ascent also adapts the interpolation parameters."},

        {"mada.alpha_const", "1", "Pixel mode: weight of the semantic-consistency penalty."},
        {"mada.beta_relax", "1e-8", "Pixel mode: weight of the reconstruction-distance relaxation."},
        {"mada.gamma_ascent", "1", "Pixel mode: step size of the input-space ascent."},
        {"mada.ascent_steps", "10", "Pixel mode: ascent iterations per generated batch."},
        {"mada.pool_batches", "8", "Pixel mode: batches of adversarial inputs kept per domain."},

        {"wae.bottleneck", "16", "Reconstructor: bottleneck width."},
        {"wae.hidden", "64", "Reconstructor: encoder/decoder hidden width."},
        {"wae.lambda", "1", "Reconstructor: weight of the latent-prior distribution match."},
        {"wae.epochs", "20", "Reconstructor: pre-training epochs on source data."},
        {"wae.retrain_epochs", "1", "Reconstructor: refresh epochs after each new domain."},
        {"wae.lr", "1e-3", "Reconstructor: optimizer step size."},
        {"wae.batch", "64", "Reconstructor: minibatch size."},

        {"meta.eta", "1e-4", "Learning rate for the task model (inner and outer steps)."},
        {"meta.psi_lr", "1e-4", "Learning rate for the perturbation/interpolation heads."},
        {"meta.iterations", "10000", "Total training iterations."},
        {"meta.batch", "32", "Training minibatch size."},
        {"meta.k_domains", "3", "Number of adversarial domains synthesized over the run; 0 = plain ERM."},
        {"meta.k_mc", "15", "Monte-Carlo samples per evaluation of a stochastic domain."},
        {"meta.k_max", "8", "Cap on stored domain snapshots; oldest are evicted first."},
        {"meta.update_psi", "true", "Minimize the head parameters in the outer step (the meta objective)."},
        {"meta.first_order", "false", "Drop the second-order term of the meta gradient."},
        {"meta.joint", "false",
         "Skip the virtual inner step: source and synthesized domains are trained jointly at the "
         "same parameters (the no-meta-learning ablation)."},
        {"meta.explicit_kl", "false",
         "Add the closed-form KL to a standard-normal prior to the head objective instead of "
         "relying on the adversarial constraint alone."},
        {"meta.kl_weight", "1e-3", "Weight of that explicit KL term."},
        {"meta.optimizer", "adam", "Outer-loop optimizer: adam | sgd."},

        {"train.print_every", "100", "Console progress every N iterations."},
        {"train.checkpoint_every", "500", "Checkpoint every N iterations (and at the end)."},
        {"train.val_fraction", "0.1", "Fraction of training data held out for validation."},
        {"train.val_max", "256", "Cap on validation examples used per measurement."},
        {"train.val_every", "20", "Refresh validation accuracy every N iterations."},

        {"uncertainty.adapt_steps", "10", "Unsupervised head-adaptation steps on a probe domain."},
        {"uncertainty.adapt_lr", "1e-3", "Step size of that adaptation."},
        {"uncertainty.adapt_draws", "4",
         "Offset draws averaged per adaptation step (lower-variance gradients)."},
        {"uncertainty.adapt_batch", "32",
         "Probe rows per adaptation step (rotating slice; keeps scoring much cheaper than "
         "repeated full forwards)."},
        {"uncertainty.bayes_samples", "30", "Stochastic forward passes for the variance baseline."},
        {"uncertainty.probe_max", "256", "Cap on probe examples used for scoring."},

        {"data.root", "", "Directory holding IDX files (train-images/train-labels etc.)."},
        {"data.source", "synthetic", "Source domain: synthetic | idx."},
        {"data.targets", "",
         "Comma list of evaluation domains, e.g. gaussian_noise:3,rotation:2 (corruption:severity) "
         "or shift magnitudes for synthetic data."},
        {"data.train_limit", "0", "Use at most N training examples (0 = all)."},
        {"data.duplicate_channels", "true", "Replicate grayscale images to the configured channel count."},

        {"synth.classes", "5", "Synthetic benchmark: number of Gaussian classes."},
        {"synth.dim", "8", "Synthetic benchmark: feature dimension."},
        {"synth.train_n", "2000", "Synthetic benchmark: source training examples."},
        {"synth.test_n", "500", "Synthetic benchmark: examples per evaluation domain."},
        {"synth.noise", "0.35", "Synthetic benchmark: class cluster standard deviation."},
        {"synth.shift", "rotation", "Synthetic benchmark: shift family rotation | covariance | permutation."},
        {"synth.magnitude", "0.5", "Synthetic benchmark: default shift magnitude for training-time probes."},
        {"synth.magnitudes", "0.25,0.5,0.75,1", "Synthetic benchmark: evaluation shift magnitudes."},
        {"synth.seed", "7", "Synthetic benchmark: world seed (class geometry), separate from run seed."},

        {"fewshot.shots", "7", "Few-shot adaptation: labeled examples per class."},
        {"fewshot.steps", "100", "Few-shot adaptation: fine-tuning steps."},
        {"fewshot.lr", "1e-3", "Few-shot adaptation: fine-tuning step size."},
    };
    return entries;
}

RunConfig::RunConfig() {
    for (const auto& e : registry()) values_[e.key] = e.def;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = trim(value);
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" + s + "'");
        try {
            set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

std::string env_name_for_key(const std::string& key, const std::string& prefix) {
    std::string name = prefix;
    for (char c : key) name += (c == '.') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return name;
}

void RunConfig::apply_env(const std::string& prefix) {
    for (const auto& e : registry()) {
        const char* v = std::getenv(env_name_for_key(e.key, prefix).c_str());
        if (v != nullptr) set(e.key, v);
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& s = get(key);
    try {
        std::size_t pos = 0;
        double x = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
    }
}

std::int64_t RunConfig::get_int(const std::string& key) const {
    const std::string& s = get(key);
    try {
        std::size_t pos = 0;
        long long x = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + s + "' is not an integer");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    std::string s = get(key);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key '" + key + "': '" + get(key) + "' is not a boolean");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string RunConfig::serialize() const {
    std::ostringstream os; // std::map keeps keys sorted
    for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
    return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("config parse: expected key=value, got '" + s + "'");
        cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return cfg;
}

std::uint64_t RunConfig::hash() const {
    std::uint64_t h = 14695981039346656037ull; // FNV-1a 64
    for (char c : serialize()) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace ugda
