#include "ugda/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ugda {

namespace {

std::uint64_t fnv64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// --- writer ----------------------------------------------------------------

struct Writer {
    std::ostringstream out;

    void line(const std::string& s) { out << s << "\n"; }

    void array(const std::string& name, const std::vector<int>& shape, const Scalar* data,
               std::int64_t numel) {
        out << "array " << name << " " << shape.size();
        for (int d : shape) out << " " << d;
        out << "\n";
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(numel * 8));
        out << "\n";
    }
    void array(const std::string& name, const VecX& v) {
        array(name, {static_cast<int>(v.size())}, v.data(), v.size());
    }
    void array(const std::string& name, const Tensor& t) {
        array(name, t.shape, t.data(), t.numel());
    }
};

// --- reader ----------------------------------------------------------------

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    explicit Reader(const std::string& b) : buf(b) {}

    std::string line() {
        const std::size_t nl = buf.find('\n', pos);
        if (nl == std::string::npos)
            throw NumericError("checkpoint: unexpected end of manifest");
        std::string s = buf.substr(pos, nl - pos);
        pos = nl + 1;
        return s;
    }

    Tensor array(const std::string& expect_name) {
        std::istringstream head(line());
        std::string tag, name;
        std::size_t ndims = 0;
        head >> tag >> name >> ndims;
        if (tag != "array" || !head)
            throw NumericError("checkpoint: malformed array header (expected '" + expect_name + "')");
        if (name != expect_name)
            throw NumericError("checkpoint: found array '" + name + "' where '" + expect_name +
                               "' was expected");
        std::vector<int> shape(ndims);
        for (auto& d : shape) head >> d;
        if (!head) throw NumericError("checkpoint: malformed shape for array '" + name + "'");
        Tensor t(shape);
        const std::size_t bytes = static_cast<std::size_t>(t.numel()) * 8;
        if (pos + bytes + 1 > buf.size())
            throw NumericError("checkpoint: payload truncated in array '" + name + "'");
        std::memcpy(t.data(), buf.data() + pos, bytes);
        pos += bytes;
        if (buf[pos] != '\n')
            throw NumericError("checkpoint: framing error after array '" + name + "'");
        ++pos;
        return t;
    }

    VecX vec(const std::string& expect_name) {
        Tensor t = array(expect_name);
        VecX v(t.numel());
        std::copy(t.v.begin(), t.v.end(), v.data());
        return v;
    }
};

void write_optimizer(Writer& w, const std::string& tag, const Optimizer& opt) {
    w.line(tag + " " + (opt.kind() == Optimizer::Kind::Adam ? "adam" : "sgd") + " " +
           std::to_string(opt.steps()));
    w.array(tag + "_m", opt.m());
    w.array(tag + "_v", opt.v());
}

void read_optimizer(Reader& r, const std::string& tag, Optimizer& opt, Eigen::Index expected) {
    std::istringstream head(r.line());
    std::string got_tag, kind;
    std::int64_t t = 0;
    head >> got_tag >> kind >> t;
    if (got_tag != tag || !head)
        throw NumericError("checkpoint: malformed optimizer record '" + tag + "'");
    VecX m = r.vec(tag + "_m");
    VecX v = r.vec(tag + "_v");
    if (kind == "adam" && m.size() != expected)
        throw NumericError("checkpoint: optimizer '" + tag + "' state has " +
                           std::to_string(m.size()) + " entries, expected " +
                           std::to_string(expected) + " (architecture mismatch?)");
    opt.restore(kind == "adam" ? Optimizer::Kind::Adam : Optimizer::Kind::Sgd, t, std::move(m),
                std::move(v));
}

} // namespace

void save_checkpoint(const MetaState& st, const std::string& path) {
    Writer w;
    w.line("ugda-checkpoint v" + std::to_string(kCheckpointVersion));
    w.line("config_hash " + hex64(st.cfg.hash()));
    w.line("iteration " + std::to_string(st.iteration));
    w.line("introduced " + std::to_string(st.domains_introduced));
    {
        std::ostringstream os;
        os.precision(17);
        os << "val_accuracy " << st.val_accuracy;
        w.line(os.str());
    }
    {
        std::ostringstream os;
        st.rng.save(os);
        w.line("rng " + os.str());
    }
    write_optimizer(w, "opt_theta", st.opt_theta);
    write_optimizer(w, "opt_psi", st.opt_psi);
    {
        std::ostringstream os;
        st.stream.save(os);
        std::string s = os.str();
        for (char& c : s)
            if (c == '\n') c = ' ';
        w.line("stream " + s);
    }
    w.array("model", st.model.params());
    w.array("aux", st.aux.params());
    w.line("wae " + std::string(st.wae.has_value() ? "1" : "0"));
    if (st.wae.has_value()) {
        w.array("wae_enc", st.wae->enc.params());
        w.array("wae_dec", st.wae->dec.params());
    }
    w.line("domains " + std::to_string(st.domains.size()));
    for (std::size_t k = 0; k < st.domains.size(); ++k) {
        const DomainSnapshot& d = st.domains[k];
        const std::string p = "d" + std::to_string(k);
        if (d.live) {
            w.line("domain live");
        } else if (d.pixel) {
            w.line("domain pixel " + std::to_string(d.pool.size()));
            for (std::size_t b = 0; b < d.pool.size(); ++b) {
                w.array(p + "_x" + std::to_string(b), d.pool[b].x_plus);
                w.array(p + "_y" + std::to_string(b), d.pool[b].y);
                w.array(p + "_xs" + std::to_string(b), d.pool[b].x_source);
            }
        } else {
            std::ostringstream os;
            os << "domain frozen " << d.view.layers.size() << " " << (d.view.mixup_on ? 1 : 0)
               << " ";
            os.precision(17);
            os << d.view.rho << " " << d.view.mix.p.a << " " << d.view.mix.p.b << " "
               << d.view.mix.p.tau;
            for (std::size_t j = 0; j < d.view.layers.size(); ++j)
                os << " " << d.view.layers[j] << " " << (d.view.dists[j].dmu_flows ? 1 : 0) << " "
                   << (d.view.dists[j].dsigma_flows ? 1 : 0);
            w.line(os.str());
            for (std::size_t j = 0; j < d.view.layers.size(); ++j) {
                w.array(p + "_mu" + std::to_string(j), d.view.dists[j].mu);
                w.array(p + "_sigma" + std::to_string(j), d.view.dists[j].sigma);
            }
        }
    }

    const std::string payload = w.out.str();
    const std::string trailer = "end " + hex64(fnv64(payload)) + "\n";
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot write checkpoint '" + path + "'");
        f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        f.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
        if (!f) throw ConfigError("short write while saving checkpoint '" + path + "'");
    }
    std::filesystem::rename(tmp, path);
}

MetaState load_checkpoint(const RunConfig& cfg, const std::string& path, bool force,
                          std::ostream* warn) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string whole = ss.str();

    // Verify the integrity trailer first: "end <hex>\n" over the payload.
    if (whole.size() < 22 || whole.back() != '\n')
        throw NumericError("checkpoint '" + path + "': integrity check failed (truncated file)");
    const std::size_t tail = whole.rfind("end ", whole.size() - 1);
    if (tail == std::string::npos || (tail > 0 && whole[tail - 1] != '\n'))
        throw NumericError("checkpoint '" + path + "': integrity trailer missing (truncated file)");
    const std::string payload = whole.substr(0, tail);
    const std::string stored_hash = whole.substr(tail + 4, whole.size() - tail - 5);
    if (stored_hash != hex64(fnv64(payload)))
        throw NumericError("checkpoint '" + path + "': integrity check failed (corrupted payload)");

    Reader r(payload);
    const std::string version = r.line();
    if (version != "ugda-checkpoint v" + std::to_string(kCheckpointVersion)) {
        if (version.rfind("ugda-checkpoint v", 0) == 0)
            throw ConfigError("checkpoint '" + path + "' is " + version +
                              "; this build reads v" + std::to_string(kCheckpointVersion) +
                              " — migration required");
        throw NumericError("'" + path + "' is not a checkpoint file");
    }
    {
        std::istringstream head(r.line());
        std::string tag, hash;
        head >> tag >> hash;
        if (tag != "config_hash") throw NumericError("checkpoint: missing config hash");
        if (hash != hex64(cfg.hash())) {
            if (!force)
                throw ConfigError("checkpoint '" + path +
                                  "' was produced under a different configuration (hash " + hash +
                                  " vs " + hex64(cfg.hash()) + "); pass --force to load anyway");
            if (warn != nullptr)
                *warn << "warning: loading checkpoint with mismatched config hash (--force)\n";
        }
    }

    MetaState st = init_state(cfg);
    {
        std::istringstream head(r.line());
        std::string tag;
        head >> tag >> st.iteration;
        if (tag != "iteration" || !head) throw NumericError("checkpoint: malformed iteration record");
    }
    {
        std::istringstream head(r.line());
        std::string tag;
        head >> tag >> st.domains_introduced;
        if (tag != "introduced" || !head) throw NumericError("checkpoint: malformed introduced record");
    }
    {
        std::istringstream head(r.line());
        std::string tag;
        head >> tag >> st.val_accuracy;
        if (tag != "val_accuracy" || !head) throw NumericError("checkpoint: malformed val_accuracy record");
    }
    {
        std::string l = r.line();
        if (l.rfind("rng ", 0) != 0) throw NumericError("checkpoint: missing rng record");
        std::istringstream is(l.substr(4));
        st.rng.load(is);
        if (!is) throw NumericError("checkpoint: malformed rng record");
    }
    read_optimizer(r, "opt_theta", st.opt_theta, st.model.param_count());
    read_optimizer(r, "opt_psi", st.opt_psi, st.aux.param_count());
    {
        std::string l = r.line();
        if (l.rfind("stream ", 0) != 0) throw NumericError("checkpoint: missing stream record");
        std::istringstream is(l.substr(7));
        st.stream.load(is);
    }
    {
        VecX model_params = r.vec("model");
        if (model_params.size() != st.model.param_count())
            throw NumericError("checkpoint: model has " + std::to_string(model_params.size()) +
                               " parameters, this configuration expects " +
                               std::to_string(st.model.param_count()));
        st.model.set_params(model_params);
        VecX aux_params = r.vec("aux");
        if (aux_params.size() != st.aux.param_count())
            throw NumericError("checkpoint: aux head size mismatch");
        st.aux.set_params(aux_params);
    }
    {
        std::istringstream head(r.line());
        std::string tag;
        int has_wae = 0;
        head >> tag >> has_wae;
        if (tag != "wae") throw NumericError("checkpoint: missing wae record");
        if (has_wae != 0) {
            VecX enc = r.vec("wae_enc");
            VecX dec = r.vec("wae_dec");
            const int flat = [&] {
                const auto& s = st.model.input_shape();
                int f = 1;
                for (int d : s) f *= d;
                return f;
            }();
            RngStream tmp(0);
            Wae wae = Wae::init(flat, static_cast<int>(cfg.get_int("wae.hidden")),
                                static_cast<int>(cfg.get_int("wae.bottleneck")), tmp);
            if (enc.size() != wae.enc.param_count() || dec.size() != wae.dec.param_count())
                throw NumericError("checkpoint: reconstructor size mismatch");
            wae.enc.set_params(enc);
            wae.dec.set_params(dec);
            st.wae = std::move(wae);
        }
    }
    {
        std::istringstream head(r.line());
        std::string tag;
        std::size_t count = 0;
        head >> tag >> count;
        if (tag != "domains" || !head) throw NumericError("checkpoint: missing domains record");
        for (std::size_t k = 0; k < count; ++k) {
            std::istringstream dl(r.line());
            std::string dtag, kind;
            dl >> dtag >> kind;
            if (dtag != "domain" || !dl) throw NumericError("checkpoint: malformed domain record");
            DomainSnapshot d;
            const std::string p = "d" + std::to_string(k);
            if (kind == "live") {
                d.live = true;
            } else if (kind == "pixel") {
                d.pixel = true;
                std::size_t pool = 0;
                dl >> pool;
                for (std::size_t b = 0; b < pool; ++b) {
                    MadaBatch mb;
                    mb.x_plus = r.array(p + "_x" + std::to_string(b));
                    mb.y = r.array(p + "_y" + std::to_string(b));
                    mb.x_source = r.array(p + "_xs" + std::to_string(b));
                    d.pool.push_back(std::move(mb));
                }
            } else if (kind == "frozen") {
                std::size_t layers = 0;
                int mixup_on = 0;
                dl >> layers >> mixup_on >> d.view.rho >> d.view.mix.p.a >> d.view.mix.p.b >>
                    d.view.mix.p.tau;
                d.view.mixup_on = mixup_on != 0;
                for (std::size_t j = 0; j < layers; ++j) {
                    std::string name;
                    int mu_flows = 0, sigma_flows = 0;
                    dl >> name >> mu_flows >> sigma_flows;
                    d.view.layers.push_back(name);
                    EffectiveGaussian eg;
                    eg.dmu_flows = mu_flows != 0;
                    eg.dsigma_flows = sigma_flows != 0;
                    d.view.dists.push_back(std::move(eg));
                }
                if (!dl) throw NumericError("checkpoint: malformed frozen-domain record");
                for (std::size_t j = 0; j < layers; ++j) {
                    d.view.dists[j].mu = r.array(p + "_mu" + std::to_string(j));
                    d.view.dists[j].sigma = r.array(p + "_sigma" + std::to_string(j));
                }
            } else {
                throw NumericError("checkpoint: unknown domain kind '" + kind + "'");
            }
            st.domains.push_back(std::move(d));
        }
    }
    return st;
}

} // namespace ugda
