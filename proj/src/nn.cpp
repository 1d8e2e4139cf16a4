#include "metamask/nn.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "metamask/errors.hpp"
#include "metamask/random.hpp"
#include "metamask/tensor_io.hpp"

namespace metamask::nn {

using autograd::Var;

void MlpSpec::validate() const
{
    if (widths.size() < 2) throw ConfigError("an MLP needs at least two layer widths");
    for (auto w : widths) {
        if (w == 0) throw ConfigError("MLP layer widths must be positive");
    }
}

std::vector<const Tensor*> MlpParams::tensors() const
{
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<Tensor*> MlpParams::tensors()
{
    std::vector<Tensor*> out;
    for (auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

MlpParams MlpParams::zeros_like() const
{
    MlpParams z{spec, {}};
    for (const auto& l : layers) z.layers.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
    return z;
}

void ModelSpec::validate() const
{
    encoder.validate();
    head_cl.validate();
    head_drr.validate();
    if (head_cl.in() != encoder.out() || head_drr.in() != encoder.out()) {
        throw ConfigError("projection heads must take the encoder output width " +
                          std::to_string(encoder.out()));
    }
}

ModelSpec make_model_spec(std::size_t d_in, const std::vector<std::size_t>& encoder_hidden,
                          std::size_t rep_dim, const std::vector<std::size_t>& head_hidden,
                          std::size_t head_out)
{
    MlpSpec enc{{d_in}};
    enc.widths.insert(enc.widths.end(), encoder_hidden.begin(), encoder_hidden.end());
    enc.widths.push_back(rep_dim);
    MlpSpec head{{rep_dim}};
    head.widths.insert(head.widths.end(), head_hidden.begin(), head_hidden.end());
    head.widths.push_back(head_out);
    ModelSpec spec{enc, head, head};
    spec.validate();
    return spec;
}

void ModelParams::validate() const
{
    spec().validate();
    if (mask.rank() != 1 || mask.size() != encoder.spec.out()) {
        throw ShapeError("mask shape " + to_string(mask.shape()) +
                         " does not match representation width " +
                         std::to_string(encoder.spec.out()));
    }
    auto check = [](const MlpParams& m, const char* name) {
        if (m.layers.size() + 1 != m.spec.widths.size()) {
            throw ShapeError(std::string(name) + ": layer count does not match widths");
        }
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            const Shape w{m.spec.widths[i], m.spec.widths[i + 1]};
            const Shape b{m.spec.widths[i + 1]};
            if (m.layers[i].weight.shape() != w || m.layers[i].bias.shape() != b) {
                throw ShapeError(std::string(name) + ": layer " + std::to_string(i) +
                                 " has shape " + to_string(m.layers[i].weight.shape()) +
                                 ", expected " + to_string(w));
            }
        }
        for (const Tensor* t : m.tensors()) {
            if (!t->all_finite()) throw DomainError(std::string(name) + ": non-finite parameter");
        }
    };
    check(encoder, "encoder");
    check(head_cl, "head_cl");
    check(head_drr, "head_drr");
    if (!mask.all_finite()) throw DomainError("non-finite mask");
}

MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed)
{
    spec.validate();
    Rng rng(seed);
    MlpParams p{spec, {}};
    for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i) {
        const std::size_t in = spec.widths[i], out = spec.widths[i + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Tensor w(Shape{in, out});
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        p.layers.push_back({std::move(w), Tensor(Shape{out})});
    }
    return p;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed)
{
    spec.validate();
    ModelParams p;
    p.encoder = init_mlp(spec.encoder, mix_seed(seed, 1));
    p.head_cl = init_mlp(spec.head_cl, mix_seed(seed, 2));
    p.head_drr = init_mlp(spec.head_drr, mix_seed(seed, 3));
    p.mask = Tensor(Shape{spec.representation_dim()}, 1.0);
    return p;
}

std::vector<Var> BoundMlp::vars() const
{
    std::vector<Var> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back(weights[i]);
        out.push_back(biases[i]);
    }
    return out;
}

BoundMlp BoundMlp::from_vars(const MlpSpec& spec, const std::vector<Var>& vars)
{
    if (vars.size() != 2 * (spec.widths.size() - 1)) {
        throw ShapeError("parameter list does not match MLP layout");
    }
    BoundMlp m{spec, {}, {}};
    for (std::size_t i = 0; i < vars.size(); i += 2) {
        m.weights.push_back(vars[i]);
        m.biases.push_back(vars[i + 1]);
    }
    return m;
}

MlpParams BoundMlp::values() const
{
    MlpParams p{spec, {}};
    for (std::size_t i = 0; i < weights.size(); ++i) {
        p.layers.push_back({weights[i].value(), biases[i].value()});
    }
    return p;
}

BoundMlp bind(autograd::Graph& graph, const MlpParams& params, bool requires_grad)
{
    BoundMlp m{params.spec, {}, {}};
    for (const auto& l : params.layers) {
        m.weights.push_back(graph.leaf(l.weight, requires_grad));
        m.biases.push_back(graph.leaf(l.bias, requires_grad));
    }
    return m;
}

Var mlp_forward(const BoundMlp& mlp, const Var& x)
{
    if (x.value().rank() != 2 || x.value().cols() != mlp.spec.in()) {
        throw ShapeError("MLP expects input width " + std::to_string(mlp.spec.in()) + ", got " +
                         to_string(x.shape()));
    }
    Var h = x;
    for (std::size_t i = 0; i < mlp.weights.size(); ++i) {
        h = autograd::add(autograd::matmul(h, mlp.weights[i]), mlp.biases[i]);
        if (i + 1 < mlp.weights.size()) h = autograd::relu(h);
    }
    return h;
}

Var encoder_forward(const BoundMlp& theta, const Var& x) { return mlp_forward(theta, x); }

Var head_forward(const BoundMlp& vartheta, const Var& h_tilde) { return mlp_forward(vartheta, h_tilde); }

Var apply_mask(const Var& h, const Var& mask)
{
    const Tensor& hv = h.value();
    const Tensor& mv = mask.value();
    if (hv.rank() != 2 || mv.rank() != 1 || mv.size() != hv.cols()) {
        throw ShapeError("mask of shape " + to_string(mv.shape()) +
                         " cannot gate representation of shape " + to_string(hv.shape()));
    }
    return autograd::mul(h, mask);
}

Tensor mlp_forward(const MlpParams& mlp, const Tensor& x)
{
    if (x.rank() != 2 || x.cols() != mlp.spec.in()) {
        throw ShapeError("MLP expects input width " + std::to_string(mlp.spec.in()) + ", got " +
                         to_string(x.shape()));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        h = ops::elementwise(BinaryOp::add, ops::matmul(h, mlp.layers[i].weight), mlp.layers[i].bias);
        if (i + 1 < mlp.layers.size()) h = ops::elementwise(UnaryOp::relu, h);
    }
    return h;
}

Tensor apply_mask(const Tensor& h, const Tensor& mask)
{
    if (h.rank() != 2 || mask.rank() != 1 || mask.size() != h.cols()) {
        throw ShapeError("mask of shape " + to_string(mask.shape()) +
                         " cannot gate representation of shape " + to_string(h.shape()));
    }
    return ops::elementwise(BinaryOp::mul, h, mask);
}

namespace {

nlohmann::json save_mlp(const std::filesystem::path& dir, const std::string& name, const MlpParams& m)
{
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const std::string w = name + "_w" + std::to_string(i) + ".mmt";
        const std::string b = name + "_b" + std::to_string(i) + ".mmt";
        io::write_mmt1(dir / w, m.layers[i].weight);
        io::write_mmt1(dir / b, m.layers[i].bias);
        files.push_back({{"weight", w}, {"bias", b}});
    }
    return {{"widths", m.spec.widths}, {"layers", files}};
}

MlpParams load_mlp(const std::filesystem::path& dir, const nlohmann::json& j)
{
    MlpParams m;
    m.spec.widths = j.at("widths").get<std::vector<std::size_t>>();
    m.spec.validate();
    for (const auto& layer : j.at("layers")) {
        m.layers.push_back({io::read_mmt1(dir / layer.at("weight").get<std::string>()),
                            io::read_mmt1(dir / layer.at("bias").get<std::string>())});
    }
    return m;
}

}  // namespace

void save_params(const std::filesystem::path& dir, const ModelParams& params)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json manifest;
    manifest["format"] = "metamask-params-1";
    manifest["encoder"] = save_mlp(dir, "encoder", params.encoder);
    manifest["head_cl"] = save_mlp(dir, "head_cl", params.head_cl);
    manifest["head_drr"] = save_mlp(dir, "head_drr", params.head_drr);
    io::write_mmt1(dir / "mask.mmt", params.mask);
    manifest["mask"] = "mask.mmt";
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
}

ModelParams load_params(const std::filesystem::path& dir)
{
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        is >> manifest;
        ModelParams p;
        p.encoder = load_mlp(dir, manifest.at("encoder"));
        p.head_cl = load_mlp(dir, manifest.at("head_cl"));
        p.head_drr = load_mlp(dir, manifest.at("head_drr"));
        p.mask = io::read_mmt1(dir / manifest.at("mask").get<std::string>());
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError((dir / "manifest.json").string() + ": " + e.what());
    }
}

}  // namespace metamask::nn
