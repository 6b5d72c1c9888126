#include "bao/tcnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace bao {

namespace {

constexpr double kNormEps = 1e-5;

// ---------------------------------------------------------------------------
// batching

// Nodes of several trees concatenated row-wise, child links rewritten to
// global row indices. Tree t occupies rows [begin[t], begin[t+1]).
struct TreeBatch {
    Mat x;
    std::vector<int> left;
    std::vector<int> right;
    std::vector<int> begin;

    int tree_count() const { return static_cast<int>(begin.size()) - 1; }
    int rows() const { return static_cast<int>(left.size()); }
};

TreeBatch make_batch(std::span<const VectorTree* const> trees) {
    TreeBatch b;
    int total = 0;
    b.begin.reserve(trees.size() + 1);
    b.begin.push_back(0);
    for (const VectorTree* t : trees) {
        total += t->node_count();
        b.begin.push_back(total);
    }
    const int width = trees.empty() ? 0 : trees.front()->width();
    b.x.resize(total, width);
    b.left.resize(total);
    b.right.resize(total);

    for (std::size_t ti = 0; ti < trees.size(); ++ti) {
        const VectorTree& t = *trees[ti];
        if (t.width() != width)
            throw std::invalid_argument("forward: trees of mixed feature width in one batch");
        const int base = b.begin[ti];
        for (int n = 0; n < t.node_count(); ++n) {
            auto f = t.features(n);
            for (int j = 0; j < width; ++j) b.x(base + n, j) = f[j];
            b.left[base + n] = t.left(n) == VectorTree::kNoChild ? -1 : base + t.left(n);
            b.right[base + n] = t.right(n) == VectorTree::kNoChild ? -1 : base + t.right(n);
        }
    }
    return b;
}

Mat gather_rows(const Mat& x, const std::vector<int>& idx) {
    Mat out = Mat::Zero(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i)
        if (idx[i] >= 0) out.row(i) = x.row(idx[i]);
    return out;
}

void scatter_add_rows(Mat& dst, const Mat& src, const std::vector<int>& idx) {
    for (int i = 0; i < src.rows(); ++i)
        if (idx[i] >= 0) dst.row(idx[i]) += src.row(i);
}

// ---------------------------------------------------------------------------
// primitive forward/backward pieces

Mat conv_affine(const Mat& x, const Mat& xl, const Mat& xr, const ConvLayer& layer) {
    Mat z = x * layer.w_self.transpose();
    z.noalias() += xl * layer.w_left.transpose();
    z.noalias() += xr * layer.w_right.transpose();
    z.rowwise() += layer.bias.transpose();
    return z;
}

struct NormCache {
    Mat xhat;     // normalized rows, before gain/shift
    Vec inv_std;  // per row
};

Mat layer_norm(const Mat& z, const NormLayer& norm, NormCache& cache) {
    const int m = static_cast<int>(z.cols());
    cache.xhat.resize(z.rows(), z.cols());
    cache.inv_std.resize(z.rows());
    Mat out(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i) {
        const double mu = z.row(i).mean();
        const double var = (z.row(i).array() - mu).square().sum() / m;
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        cache.inv_std(i) = inv;
        cache.xhat.row(i) = (z.row(i).array() - mu) * inv;
        out.row(i) = cache.xhat.row(i).cwiseProduct(norm.gain.transpose()) +
                     norm.shift.transpose();
    }
    return out;
}

// dZ from dY through the normalization; accumulates gain/shift gradients.
Mat layer_norm_backward(const Mat& dy, const NormLayer& norm, const NormCache& cache,
                        Vec& dgain, Vec& dshift) {
    const int m = static_cast<int>(dy.cols());
    dgain = Vec::Zero(m);
    dshift = Vec::Zero(m);
    Mat dz(dy.rows(), dy.cols());
    for (int i = 0; i < dy.rows(); ++i) {
        const auto xhat = cache.xhat.row(i).array();
        const auto dxhat = dy.row(i).array() * norm.gain.transpose().array();
        dgain.array() += (dy.row(i).array() * xhat).transpose();
        dshift.array() += dy.row(i).array().transpose();
        const double mean_dxhat = dxhat.mean();
        const double mean_dxhat_xhat = (dxhat * xhat).mean();
        dz.row(i) = (cache.inv_std(i) * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)).matrix();
    }
    return dz;
}

struct ConvStageCache {
    Mat input;       // layer input
    Mat in_left;     // gathered left-child rows
    Mat in_right;    // gathered right-child rows
    NormCache norm;
    Mat act;         // post-ReLU output
};

struct ForwardCache {
    std::vector<ConvStageCache> conv;
    Mat pooled;                 // trees x channels
    std::vector<int> pool_arg;  // trees*channels, row index of max
    Mat fc1_lin;
    NormCache fc1_norm;
    Mat fc1_act;
    Vec out;  // per tree
};

Vec run_forward(const TcnnModel& model, const TreeBatch& batch, ForwardCache* cache) {
    const int trees = batch.tree_count();
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.conv.resize(model.conv.size());

    Mat a = batch.x * model.dims.input_scale;
    for (std::size_t l = 0; l < model.conv.size(); ++l) {
        ConvStageCache& sc = c.conv[l];
        sc.input = std::move(a);
        sc.in_left = gather_rows(sc.input, batch.left);
        sc.in_right = gather_rows(sc.input, batch.right);
        Mat z = conv_affine(sc.input, sc.in_left, sc.in_right, model.conv[l]);
        Mat n = layer_norm(z, model.conv_norm[l], sc.norm);
        sc.act = n.cwiseMax(0.0);
        a = sc.act;
    }

    // dynamic pooling: elementwise max over each tree's nodes
    const int channels = static_cast<int>(a.cols());
    c.pooled.resize(trees, channels);
    c.pool_arg.assign(static_cast<std::size_t>(trees) * channels, 0);
    for (int t = 0; t < trees; ++t) {
        const int lo = batch.begin[t], hi = batch.begin[t + 1];
        for (int j = 0; j < channels; ++j) {
            double best = a(lo, j);
            int arg = lo;
            for (int i = lo + 1; i < hi; ++i)
                if (a(i, j) > best) { best = a(i, j); arg = i; }
            c.pooled(t, j) = best;
            c.pool_arg[static_cast<std::size_t>(t) * channels + j] = arg;
        }
    }

    c.fc1_lin = c.pooled * model.fc1.w.transpose();
    c.fc1_lin.rowwise() += model.fc1.bias.transpose();
    Mat n1 = layer_norm(c.fc1_lin, model.fc1_norm, c.fc1_norm);
    c.fc1_act = n1.cwiseMax(0.0);

    c.out = (c.fc1_act * model.fc2.w.transpose()).col(0) + Vec::Constant(trees, model.fc2.bias(0));
    return c.out;
}

TcnnModel zeros_like(const TcnnModel& model) {
    TcnnModel g;
    g.dims = model.dims;
    g.init_seed = model.init_seed;
    g.conv.resize(model.conv.size());
    g.conv_norm.resize(model.conv_norm.size());
    for (std::size_t i = 0; i < model.conv.size(); ++i) {
        g.conv[i].w_self = Mat::Zero(model.conv[i].w_self.rows(), model.conv[i].w_self.cols());
        g.conv[i].w_left = Mat::Zero(model.conv[i].w_left.rows(), model.conv[i].w_left.cols());
        g.conv[i].w_right = Mat::Zero(model.conv[i].w_right.rows(), model.conv[i].w_right.cols());
        g.conv[i].bias = Vec::Zero(model.conv[i].bias.size());
        g.conv_norm[i].gain = Vec::Zero(model.conv_norm[i].gain.size());
        g.conv_norm[i].shift = Vec::Zero(model.conv_norm[i].shift.size());
    }
    g.fc1.w = Mat::Zero(model.fc1.w.rows(), model.fc1.w.cols());
    g.fc1.bias = Vec::Zero(model.fc1.bias.size());
    g.fc1_norm.gain = Vec::Zero(model.fc1_norm.gain.size());
    g.fc1_norm.shift = Vec::Zero(model.fc1_norm.shift.size());
    g.fc2.w = Mat::Zero(model.fc2.w.rows(), model.fc2.w.cols());
    g.fc2.bias = Vec::Zero(model.fc2.bias.size());
    return g;
}

std::pair<TcnnModel, double> run_backward(const TcnnModel& model, const TreeBatch& batch,
                                          std::span<const double> targets) {
    ForwardCache c;
    const Vec out = run_forward(model, batch, &c);
    const int trees = batch.tree_count();

    double loss = 0.0;
    Vec dout(trees);
    for (int t = 0; t < trees; ++t) {
        const double r = out(t) - targets[t];
        loss += r * r;
        dout(t) = 2.0 * r / trees;
    }
    loss /= trees;

    TcnnModel g = zeros_like(model);

    // fc2
    g.fc2.w = dout.transpose() * c.fc1_act;
    g.fc2.bias(0) = dout.sum();
    Mat dh = dout * model.fc2.w;  // trees x fc_hidden

    // fc1 relu + norm + linear
    dh = dh.cwiseProduct((c.fc1_act.array() > 0.0).cast<double>().matrix());
    Mat dlin = layer_norm_backward(dh, model.fc1_norm, c.fc1_norm,
                                   g.fc1_norm.gain, g.fc1_norm.shift);
    g.fc1.w = dlin.transpose() * c.pooled;
    g.fc1.bias = dlin.colwise().sum().transpose();
    Mat dpool = dlin * model.fc1.w;  // trees x channels

    // unpool: gradient routes to the argmax node of each (tree, channel)
    const int channels = static_cast<int>(dpool.cols());
    Mat da = Mat::Zero(batch.rows(), channels);
    for (int t = 0; t < trees; ++t)
        for (int j = 0; j < channels; ++j)
            da(c.pool_arg[static_cast<std::size_t>(t) * channels + j], j) += dpool(t, j);

    // conv stack, last to first
    for (int l = static_cast<int>(model.conv.size()) - 1; l >= 0; --l) {
        const ConvStageCache& sc = c.conv[l];
        da = da.cwiseProduct((sc.act.array() > 0.0).cast<double>().matrix());
        Mat dz = layer_norm_backward(da, model.conv_norm[l], sc.norm,
                                     g.conv_norm[l].gain, g.conv_norm[l].shift);

        g.conv[l].w_self = dz.transpose() * sc.input;
        g.conv[l].w_left = dz.transpose() * sc.in_left;
        g.conv[l].w_right = dz.transpose() * sc.in_right;
        g.conv[l].bias = dz.colwise().sum().transpose();

        if (l > 0) {
            Mat dx = dz * model.conv[l].w_self;
            scatter_add_rows(dx, dz * model.conv[l].w_left, batch.left);
            scatter_add_rows(dx, dz * model.conv[l].w_right, batch.right);
            da = std::move(dx);
        }
    }

    return {std::move(g), loss};
}

std::vector<std::span<double>> param_spans(TcnnModel& model) {
    std::vector<std::span<double>> spans;
    visit_params(model, [&](std::span<double> s) { spans.push_back(s); });
    return spans;
}

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

constexpr char kCheckpointMagic[8] = {'B', 'A', 'O', 'T', 'C', 'N', 'N', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

TcnnModel init_model(const TcnnDims& dims, std::uint64_t seed) {
    if (dims.input_width < 1 || dims.conv_channels.empty() || dims.fc_hidden < 1)
        throw std::invalid_argument("init_model: invalid dimensions");

    TcnnModel m;
    m.dims = dims;
    m.init_seed = seed;
    Rng rng(seed);

    auto kaiming = [&](Mat& w, int out, int in, int fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        w.resize(out, in);
        for (int j = 0; j < in; ++j)
            for (int i = 0; i < out; ++i) w(i, j) = rng.uniform(-bound, bound);
    };

    int in = dims.input_width;
    for (int out : dims.conv_channels) {
        ConvLayer layer;
        kaiming(layer.w_self, out, in, 3 * in);
        kaiming(layer.w_left, out, in, 3 * in);
        kaiming(layer.w_right, out, in, 3 * in);
        layer.bias = Vec::Zero(out);
        m.conv.push_back(std::move(layer));
        m.conv_norm.push_back({Vec::Ones(out), Vec::Zero(out)});
        in = out;
    }

    kaiming(m.fc1.w, dims.fc_hidden, in, in);
    m.fc1.bias = Vec::Zero(dims.fc_hidden);
    m.fc1_norm = {Vec::Ones(dims.fc_hidden), Vec::Zero(dims.fc_hidden)};
    kaiming(m.fc2.w, 1, dims.fc_hidden, dims.fc_hidden);
    m.fc2.bias = Vec::Zero(1);
    return m;
}

bool model_is_finite(const TcnnModel& model) {
    bool ok = true;
    visit_params(const_cast<TcnnModel&>(model), [&](std::span<double> s) {
        for (double v : s)
            if (!std::isfinite(v)) ok = false;
    });
    return ok;
}

std::size_t param_count(const TcnnModel& model) {
    std::size_t n = 0;
    visit_params(const_cast<TcnnModel&>(model), [&](std::span<double> s) { n += s.size(); });
    return n;
}

Mat tree_conv_layer(const VectorTree& tree, const Mat& node_features, const ConvLayer& layer) {
    if (node_features.cols() != layer.w_self.cols())
        throw std::invalid_argument("tree_conv_layer: feature width does not match filter width");
    if (node_features.rows() != tree.node_count())
        throw std::invalid_argument("tree_conv_layer: row count does not match tree");

    std::vector<int> left(tree.node_count()), right(tree.node_count());
    for (int i = 0; i < tree.node_count(); ++i) {
        left[i] = tree.left(i);
        right[i] = tree.right(i);
    }
    return conv_affine(node_features, gather_rows(node_features, left),
                       gather_rows(node_features, right), layer);
}

Vec dynamic_pool(const Mat& node_features) {
    if (node_features.rows() == 0)
        throw std::invalid_argument("dynamic_pool: empty tree");
    return node_features.colwise().maxCoeff().transpose();
}

double forward(const TcnnModel& model, const VectorTree& tree) {
    const VectorTree* p = &tree;
    return forward_batch(model, {&p, 1})[0];
}

std::vector<double> forward_batch(const TcnnModel& model,
                                  std::span<const VectorTree* const> trees) {
    if (trees.empty()) return {};
    for (const VectorTree* t : trees)
        if (t->width() != model.dims.input_width)
            throw std::invalid_argument("forward: tree width does not match model input width");
    if (!model_is_finite(model))
        throw std::runtime_error("forward: model contains non-finite parameters");

    const TreeBatch batch = make_batch(trees);
    const Vec out = run_forward(model, batch, nullptr);
    return {out.data(), out.data() + out.size()};
}

double predict_performance(const TcnnModel& model, const VectorTree& tree) {
    return std::expm1(forward(model, tree));
}

double mse_loss(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size() || predictions.empty())
        throw std::invalid_argument("mse_loss: size mismatch or empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double r = predictions[i] - targets[i];
        acc += r * r;
    }
    return acc / static_cast<double>(predictions.size());
}

std::pair<TcnnModel, double> backward(const TcnnModel& model,
                                      std::span<const TrainExample> batch) {
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    std::vector<const VectorTree*> trees(batch.size());
    std::vector<double> targets(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        trees[i] = batch[i].tree;
        targets[i] = batch[i].target;
    }
    auto [grads, loss] = run_backward(model, make_batch(trees), targets);
    if (!std::isfinite(loss) || !model_is_finite(grads))
        throw std::runtime_error("backward: non-finite loss or gradients");
    return {std::move(grads), loss};
}

int convergence_epoch(std::span<const double> loss_history, int window, double threshold) {
    for (std::size_t e = static_cast<std::size_t>(window); e < loss_history.size(); ++e) {
        const double ref = loss_history[e - window];
        if (ref <= 0.0) return static_cast<int>(e) + 1;
        if ((ref - loss_history[e]) / ref < threshold) return static_cast<int>(e) + 1;
    }
    return 0;
}

TrainResult train(TcnnModel model, std::span<const VectorTree* const> trees,
                  std::span<const double> performances, const TrainConfig& config,
                  Rng& rng) {
    if (trees.empty() || trees.size() != performances.size())
        throw std::invalid_argument("train: empty data or size mismatch");
    if (config.batch_size < 1 || config.max_epochs < 1)
        throw std::invalid_argument("train: invalid config");

    const std::size_t n = trees.size();
    std::vector<double> targets(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (performances[i] < 0.0)
            throw std::invalid_argument("train: negative performance");
        targets[i] = std::log1p(performances[i]);
    }

    TcnnModel adam_m = zeros_like(model);
    TcnnModel adam_v = zeros_like(model);
    auto params = param_spans(model);
    auto ms = param_spans(adam_m);
    auto vs = param_spans(adam_v);
    long step = 0;

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;

        for (std::size_t lo = 0; lo < n; lo += config.batch_size) {
            const std::size_t hi = std::min(n, lo + config.batch_size);
            std::vector<const VectorTree*> bt(hi - lo);
            std::vector<double> by(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                bt[i - lo] = trees[order[i]];
                by[i - lo] = targets[order[i]];
            }
            auto [grads, loss] = run_backward(model, make_batch(bt), by);
            if (!std::isfinite(loss))
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch + 1));
            epoch_loss += loss * static_cast<double>(hi - lo);

            ++step;
            const double bc1 = 1.0 - std::pow(config.adam_beta1, step);
            const double bc2 = 1.0 - std::pow(config.adam_beta2, step);
            auto gs = param_spans(grads);
            for (std::size_t p = 0; p < params.size(); ++p) {
                for (std::size_t k = 0; k < params[p].size(); ++k) {
                    const double g = gs[p][k];
                    ms[p][k] = config.adam_beta1 * ms[p][k] + (1.0 - config.adam_beta1) * g;
                    vs[p][k] = config.adam_beta2 * vs[p][k] + (1.0 - config.adam_beta2) * g * g;
                    params[p][k] -= config.learning_rate * (ms[p][k] / bc1) /
                                    (std::sqrt(vs[p][k] / bc2) + config.adam_eps);
                }
            }
        }

        result.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
        if (convergence_epoch(result.epoch_loss, config.convergence_window,
                              config.convergence_threshold) != 0)
            break;
    }

    if (!model_is_finite(model))
        throw std::runtime_error("train: model diverged to non-finite parameters");
    result.model = std::move(model);
    return result;
}

void save_checkpoint(const TcnnModel& model, const TrainConfig& config,
                     const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);

    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<std::uint32_t>(model.dims.input_width));
    write_u32(os, static_cast<std::uint32_t>(model.dims.conv_channels.size()));
    for (int c : model.dims.conv_channels) write_u32(os, static_cast<std::uint32_t>(c));
    write_u32(os, static_cast<std::uint32_t>(model.dims.fc_hidden));
    os.write(reinterpret_cast<const char*>(&model.dims.input_scale),
             sizeof model.dims.input_scale);
    write_u64(os, model.init_seed);
    write_u64(os, param_count(model));

    visit_params(const_cast<TcnnModel&>(model), [&](std::span<double> s) {
        os.write(reinterpret_cast<const char*>(s.data()),
                 static_cast<std::streamsize>(s.size() * sizeof(double)));
    });
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
    os.close();

    nlohmann::json j{{"batch_size", config.batch_size},
                     {"max_epochs", config.max_epochs},
                     {"convergence_window", config.convergence_window},
                     {"convergence_threshold", config.convergence_threshold},
                     {"learning_rate", config.learning_rate},
                     {"adam_beta1", config.adam_beta1},
                     {"adam_beta2", config.adam_beta2},
                     {"adam_eps", config.adam_eps}};
    std::ofstream js(path + ".json");
    if (!js) throw std::runtime_error("save_checkpoint: cannot open " + path + ".json");
    js << j.dump(2) << '\n';
}

std::pair<TcnnModel, TrainConfig> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);

    char magic[8] = {};
    is.read(magic, sizeof magic);
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(version));

    TcnnDims dims;
    dims.input_width = static_cast<int>(read_u32(is));
    const std::uint32_t n_conv = read_u32(is);
    dims.conv_channels.clear();
    for (std::uint32_t i = 0; i < n_conv; ++i)
        dims.conv_channels.push_back(static_cast<int>(read_u32(is)));
    dims.fc_hidden = static_cast<int>(read_u32(is));
    is.read(reinterpret_cast<char*>(&dims.input_scale), sizeof dims.input_scale);
    const std::uint64_t seed = read_u64(is);
    const std::uint64_t expected = read_u64(is);

    TcnnModel model = init_model(dims, seed);
    if (param_count(model) != expected)
        throw std::runtime_error("load_checkpoint: parameter count mismatch in " + path);

    visit_params(model, [&](std::span<double> s) {
        is.read(reinterpret_cast<char*>(s.data()),
                static_cast<std::streamsize>(s.size() * sizeof(double)));
    });
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);

    TrainConfig config;
    std::ifstream js(path + ".json");
    if (js) {
        nlohmann::json j;
        js >> j;
        config.batch_size = j.value("batch_size", config.batch_size);
        config.max_epochs = j.value("max_epochs", config.max_epochs);
        config.convergence_window = j.value("convergence_window", config.convergence_window);
        config.convergence_threshold =
            j.value("convergence_threshold", config.convergence_threshold);
        config.learning_rate = j.value("learning_rate", config.learning_rate);
        config.adam_beta1 = j.value("adam_beta1", config.adam_beta1);
        config.adam_beta2 = j.value("adam_beta2", config.adam_beta2);
        config.adam_eps = j.value("adam_eps", config.adam_eps);
    }
    return {std::move(model), config};
}

}  // namespace bao
