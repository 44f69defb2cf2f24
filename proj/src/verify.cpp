#include "clipmem/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "clipmem/datagen.hpp"
#include "clipmem/grad_check.hpp"
#include "clipmem/learning.hpp"
#include "clipmem/memory.hpp"
#include "clipmem/tensor.hpp"

namespace clipmem::verify {

using numcore::Tensor;
using Rng = std::mt19937_64;

namespace {

Tensor random_tensor(numcore::Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                     bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(numcore::shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

memory::CMParams random_cm(std::size_t d, std::size_t r, memory::MemoryVariant variant,
                           memory::Infusion infusion, Rng& rng) {
    memory::CMParams p;
    p.variant = variant;
    p.infusion = infusion;
    p.channels = d;
    p.reduced = r;
    p.w_key = random_tensor({d, r}, rng, -1, 1, true);
    p.w_value = random_tensor({d, r}, rng, -1, 1, true);
    p.w_query = random_tensor({d, r}, rng, -1, 1, true);
    p.w_in = random_tensor({d, r}, rng, -1, 1, true);
    p.w_out = random_tensor({r, d}, rng, -1, 1, true);
    return p;
}

// A model with every memory weight nonzero, so no branch is trivially silent.
learning::VideoModel random_video_model(memory::MemoryVariant variant, memory::Infusion infusion,
                                        Rng& rng) {
    learning::ModelConfig mc;
    learning::CMConfig cc;
    cc.variant = variant;
    cc.infusion = infusion;
    auto model = learning::init_model(mc, cc, rng);
    auto w_out = model.cm.w_out.mutable_data();
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    for (double& v : w_out) v = dist(rng);
    for (auto* bias : {&model.backbone.b1, &model.backbone.b2, &model.classifier.bc})
        for (double& v : bias->mutable_data()) v = dist(rng);
    return model;
}

datagen::Dataset small_dataset(unsigned seed) {
    datagen::XorMotifTask task;
    task.n_train = 8;
    task.n_val = 2;
    return datagen::gen_dataset(task, seed);
}

// --- suites ----------------------------------------------------------------

SuiteResult numcore_suite() {
    SuiteResult r{"numcore", true, "", 0.0};
    Rng rng(11);
    double assoc = 0.0, worst_grad = 0.0, softmax_sum = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = uniform_size(rng, 1, 8), n = uniform_size(rng, 1, 8),
                          p = uniform_size(rng, 1, 8), q = uniform_size(rng, 1, 8);
        Tensor a = random_tensor({m, n}, rng), b = random_tensor({n, p}, rng),
               c = random_tensor({p, q}, rng);
        assoc = std::max(assoc, max_abs_diff(numcore::matmul(numcore::matmul(a, b), c).data(),
                                             numcore::matmul(a, numcore::matmul(b, c)).data()));

        Tensor x = random_tensor({m, n}, rng, -2, 2, true);
        Tensor y = random_tensor({m, n}, rng, -2, 2, true);
        Tensor row = random_tensor({1, n}, rng, -2, 2, true);
        Tensor w = random_tensor({n, p}, rng, -2, 2, true);
        const std::size_t label = uniform_size(rng, 0, n - 1);
        auto loss = [&] {
            Tensor h = numcore::matmul(numcore::sigmoid(numcore::mul(x, row)), w);
            Tensor g = numcore::add(numcore::relu(numcore::sub(x, y)), numcore::mul(x, y));
            Tensor t = numcore::transpose(numcore::add_row(numcore::scale(g, 0.7), row));
            Tensor pooled = numcore::mean_over_axes(numcore::add_scalar(t, 0.3), {1});
            Tensor logits = numcore::reshape(numcore::mean_over_axes(g, {0}), {n});
            Tensor bins = numcore::bin_mean_rows(h, std::min<std::size_t>(m, 2));
            return numcore::add(numcore::add(numcore::sum_all(bins), numcore::sum_all(pooled)),
                                numcore::softmax_cross_entropy(logits, label));
        };
        auto report = numcore::grad_check(loss, {{"x", x}, {"y", y}, {"row", row}, {"w", w}});
        worst_grad = std::max(worst_grad, report.max_rel_diff);

        std::vector<double> logits(n);
        std::uniform_real_distribution<double> wide(-100, 100);
        for (double& v : logits) v = wide(rng);
        double s = 0.0;
        for (double v : numcore::softmax(logits)) s += v;
        softmax_sum = std::max(softmax_sum, std::abs(s - 1.0));
    }
    Tensor extreme = Tensor::vector({-100.0, 100.0});
    bool finite = std::isfinite(numcore::sigmoid(extreme).at(0)) &&
                  std::isfinite(numcore::softmax_cross_entropy(extreme, 0).item());
    r.passed = assoc <= 1e-10 && worst_grad <= 1e-6 && softmax_sum <= 1e-12 && finite;
    r.detail = "assoc=" + fmt(assoc) + " grad_rel=" + fmt(worst_grad) +
               " softmax_sum=" + fmt(softmax_sum) + (finite ? " saturation=ok" : " saturation=NONFINITE");
    return r;
}

SuiteResult datagen_suite() {
    SuiteResult r{"datagen", true, "", 0.0};
    datagen::XorMotifTask task;
    task.n_train = 400;
    task.n_val = 100;
    const auto a = datagen::gen_dataset(task, 3);
    const auto b = datagen::gen_dataset(task, 3);
    bool same = a.train.size() == b.train.size();
    for (std::size_t i = 0; same && i < a.train.size(); ++i)
        same = a.train[i].frames == b.train[i].frames && a.train[i].label == b.train[i].label;
    std::size_t ones = 0;
    for (const auto& v : a.train) ones += v.label;
    const double freq = static_cast<double>(ones) / static_cast<double>(a.train.size());
    Rng rng(5);
    bool in_range = true;
    for (const auto& v : a.train) {
        for (const auto& c : datagen::sample_clips(v, 5, 8, rng))
            in_range = in_range && c.start + c.length <= v.num_frames;
        for (const auto& c : datagen::uniform_test_crops(v, 8, 10))
            in_range = in_range && c.start + c.length <= v.num_frames;
    }
    r.passed = same && in_range && std::abs(freq - 0.5) <= 0.05;
    r.detail = std::string(same ? "deterministic" : "NONDETERMINISTIC") +
               (in_range ? " clips_in_range" : " CLIP_OUT_OF_RANGE") + " label_freq=" +
               std::to_string(freq);
    return r;
}

SuiteResult memory_suite() {
    SuiteResult r{"memory", true, "", 0.0};
    const double oracle = oracle_equivalence_error(100, 21);
    Rng rng(22);
    double perm = 0.0;
    bool gate_ok = true;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = uniform_size(rng, 1, 8), k = uniform_size(rng, 1, 6),
                          d = uniform_size(rng, 1, 16), dr = uniform_size(rng, 1, 8);
        std::vector<Tensor> feats;
        for (std::size_t i = 0; i < n; ++i) feats.push_back(random_tensor({k, d}, rng));
        auto p = random_cm(d, dr, memory::MemoryVariant::associative, memory::Infusion::gating, rng);
        auto shuffled = feats;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        perm = std::max(perm, max_abs_diff(memory::push_associative(feats, p.w_key, p.w_value).value.data(),
                                           memory::push_associative(shuffled, p.w_key, p.w_value).value.data()));
        perm = std::max(perm, max_abs_diff(memory::push_avgpool(feats, p.w_in).value.data(),
                                           memory::push_avgpool(shuffled, p.w_in).value.data()));
        const auto mem = memory::push_associative(feats, p.w_key, p.w_value);
        for (const auto& x : feats) {
            Tensor out = memory::infuse_gating(x, memory::pop_associative(mem, x, p.w_query), p.w_out);
            for (std::size_t i = 0; i < x.numel(); ++i) {
                const double in = x.at(i), o = out.at(i);
                if (in == 0.0) {
                    gate_ok = gate_ok && o == 0.0;
                    continue;
                }
                // Closed bounds: 1 + sigmoid(x) rounds to exactly 1 or 2 once |x| > ~37.
                const double ratio = o / in;
                gate_ok = gate_ok && ratio >= 1.0 && ratio <= 2.0;
            }
        }
    }
    r.passed = oracle <= 1e-9 && perm <= 1e-12 && gate_ok;
    r.detail = "oracle=" + fmt(oracle) + " permutation=" + fmt(perm) +
               (gate_ok ? " gate_bounds=ok" : " gate_bounds=VIOLATED");
    return r;
}

SuiteResult storage_suite() {
    SuiteResult r{"storage", storage_invariance(64, 31), "", 0.0};
    r.detail = r.passed ? "value count constant for N=1..64" : "memory size grows with N";
    return r;
}

SuiteResult grad_suite(const VerifyOptions& options) {
    SuiteResult r{"grad", true, "", 0.0};
    for (const auto& g : pipeline_grad_check(41, options)) {
        r.passed = r.passed && g.max_rel_diff <= 1e-5;
        r.detail += g.combination + "=" + fmt(g.max_rel_diff) + " ";
    }
    return r;
}

SuiteResult strategy_suite() {
    SuiteResult r{"strategy", true, "", 0.0};
    for (const auto& s : strategy_equivalence({1, 3, 5}, 51)) {
        r.passed = r.passed && s.loss_diff <= 1e-12 && s.max_grad_diff <= 1e-9;
        r.detail += "N=" + std::to_string(s.clips) + ":loss=" + fmt(s.loss_diff) +
                    ",grad=" + fmt(s.max_grad_diff) + " ";
    }
    return r;
}

SuiteResult flops_suite() {
    const auto f = flops_counter_check(20, 61);
    SuiteResult r{"flops", f.mismatches == 0 && f.doubling_linear, "", 0.0};
    r.detail = std::to_string(f.shapes_checked - f.mismatches) + "/" +
               std::to_string(f.shapes_checked) + " shapes exact" +
               (f.doubling_linear ? ", count(2N)=2count(N)" : ", NOT linear in N");
    return r;
}

using SuiteFn = std::function<SuiteResult(const VerifyOptions&)>;

const std::vector<std::pair<std::string, SuiteFn>>& registry() {
    static const std::vector<std::pair<std::string, SuiteFn>> suites = {
        {"numcore", [](const VerifyOptions&) { return numcore_suite(); }},
        {"datagen", [](const VerifyOptions&) { return datagen_suite(); }},
        {"memory", [](const VerifyOptions&) { return memory_suite(); }},
        {"storage", [](const VerifyOptions&) { return storage_suite(); }},
        {"grad", grad_suite},
        {"strategy", [](const VerifyOptions&) { return strategy_suite(); }},
        {"flops", [](const VerifyOptions&) { return flops_suite(); }},
    };
    return suites;
}

}  // namespace

std::vector<std::string> suite_names() {
    std::vector<std::string> names;
    for (const auto& [name, fn] : registry()) names.push_back(name);
    return names;
}

std::vector<SuiteResult> run_verify(const std::string& suite, const VerifyOptions& options) {
    std::vector<SuiteResult> results;
    bool matched = false;
    for (const auto& [name, fn] : registry()) {
        if (suite != "all" && suite != name) continue;
        matched = true;
        const auto start = std::chrono::steady_clock::now();
        SuiteResult r = fn(options);
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        results.push_back(std::move(r));
    }
    if (!matched) {
        std::string known = "all";
        for (const auto& n : suite_names()) known += "|" + n;
        throw UnknownSuite("unknown suite '" + suite + "' (expected " + known + ")");
    }
    return results;
}

double oracle_equivalence_error(std::size_t configs, unsigned seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t trial = 0; trial < configs; ++trial) {
        const std::size_t n = uniform_size(rng, 1, 8), k = uniform_size(rng, 1, 6),
                          d = uniform_size(rng, 1, 16), dr = uniform_size(rng, 1, 8);
        std::vector<Tensor> feats;
        for (std::size_t i = 0; i < n; ++i) feats.push_back(random_tensor({k, d}, rng));
        Tensor wq = random_tensor({d, dr}, rng), wk = random_tensor({d, dr}, rng),
               wv = random_tensor({d, dr}, rng);
        const auto mem = memory::push_associative(feats, wk, wv);
        for (std::size_t i = 0; i < n; ++i) {
            const auto popped = memory::pop_associative(mem, feats[i], wq);
            const auto expected = memory::attention_oracle(feats, i, wq, wk, wv);
            worst = std::max(worst, max_abs_diff(popped.value.data(), expected.value.data()));
        }
    }
    return worst;
}

std::vector<PipelineGradResult> pipeline_grad_check(unsigned seed, const VerifyOptions& options) {
    using memory::Infusion;
    using memory::MemoryVariant;
    std::vector<PipelineGradResult> results;
    const auto data = small_dataset(seed);
    const std::pair<MemoryVariant, Infusion> combos[] = {
        {MemoryVariant::associative, Infusion::gating},
        {MemoryVariant::associative, Infusion::residual},
        {MemoryVariant::avgpool, Infusion::gating},
        {MemoryVariant::avgpool, Infusion::residual},
    };
    Rng rng(seed);
    for (const auto& [variant, infusion] : combos) {
        const auto model = random_video_model(variant, infusion, rng);
        std::vector<const datagen::VideoSample*> videos{&data.train[0]};
        const auto batch = learning::sample_batch(videos, 3, 8, rng);
        auto loss_fn = [&] {
            const auto logits = learning::forward_clips(model, batch[0].clips);
            return learning::video_loss(logits, batch[0].video->label, 1.0).total;
        };
        auto params = model.parameters();
        for (auto& p : params) p.tensor.zero_grad();
        numcore::backward(loss_fn());
        std::vector<std::vector<double>> analytic;
        std::size_t count = 0;
        for (const auto& p : params) {
            analytic.push_back(p.tensor.grad());
            count += p.tensor.numel();
            if (options.corrupt_w_out_grad && p.name == "cm.w_out")
                for (double& g : analytic.back()) g = 1.5 * g + 0.05;
        }
        auto value_fn = [&] {
            numcore::NoGradGuard no_grad;
            return loss_fn().item();
        };
        const auto report = numcore::grad_check_values(value_fn, params, analytic);
        for (auto& p : params) p.tensor.zero_grad();
        results.push_back({memory::to_string(variant) + "+" + memory::to_string(infusion), count,
                           report.max_rel_diff});
    }
    return results;
}

std::vector<StrategyResult> strategy_equivalence(const std::vector<std::size_t>& clip_counts,
                                                 unsigned seed) {
    std::vector<StrategyResult> results;
    const auto data = small_dataset(seed);
    Rng init(seed);
    const auto model = random_video_model(memory::MemoryVariant::associative,
                                          memory::Infusion::gating, init);
    std::vector<const datagen::VideoSample*> videos{&data.train[0], &data.train[1]};
    for (std::size_t n : clip_counts) {
        Rng rng_a(seed + n), rng_b(seed + n);
        const auto batch_a = learning::sample_batch(videos, n, 8, rng_a);
        const auto batch_b = learning::sample_batch(videos, n, 8, rng_b);
        const auto a = learning::train_step_batch_reduction(batch_a, model, 1.0);
        const auto b = learning::train_step_multi_iteration(batch_b, model, 1.0);
        StrategyResult s;
        s.clips = n;
        s.loss_diff = std::abs(a.loss - b.loss);
        for (std::size_t p = 0; p < a.grads.size(); ++p)
            s.max_grad_diff = std::max(s.max_grad_diff, max_abs_diff(a.grads[p], b.grads[p]));
        results.push_back(s);
    }
    return results;
}

namespace {

std::uint64_t measured_cm_macs(const std::vector<Tensor>& feats, const memory::CMParams& params) {
    numcore::NoGradGuard no_grad;
    numcore::MacCounter counter;
    memory::collaborate(feats, params);
    return counter.count();
}

}  // namespace

FlopsResult flops_counter_check(std::size_t shapes, unsigned seed) {
    Rng rng(seed);
    FlopsResult f;
    f.doubling_linear = true;
    for (std::size_t trial = 0; trial < shapes; ++trial) {
        const std::size_t n = uniform_size(rng, 1, 8), k = uniform_size(rng, 1, 6),
                          d = uniform_size(rng, 1, 16), dr = uniform_size(rng, 1, 8);
        auto p = random_cm(d, dr, memory::MemoryVariant::associative, memory::Infusion::gating, rng);
        std::vector<Tensor> feats;
        for (std::size_t i = 0; i < 2 * n; ++i) feats.push_back(random_tensor({k, d}, rng));
        const std::vector<Tensor> half(feats.begin(), feats.begin() + static_cast<std::ptrdiff_t>(n));
        const auto count_n = measured_cm_macs(half, p);
        const auto count_2n = measured_cm_macs(feats, p);
        ++f.shapes_checked;
        if (count_n != memory::flops_cm(n, k, d, dr)) ++f.mismatches;
        if (count_2n != 2 * count_n || count_2n != memory::flops_cm(2 * n, k, d, dr))
            f.doubling_linear = false;
    }
    return f;
}

bool storage_invariance(std::size_t max_clips, unsigned seed) {
    Rng rng(seed);
    const std::size_t k = 2, d = 16, dr = 4;
    auto p = random_cm(d, dr, memory::MemoryVariant::associative, memory::Infusion::gating, rng);
    std::vector<Tensor> feats;
    for (std::size_t n = 1; n <= max_clips; ++n) {
        feats.push_back(random_tensor({k, d}, rng));
        if (memory::push_associative(feats, p.w_key, p.w_value).value_count() != dr * dr) return false;
        if (memory::push_avgpool(feats, p.w_in).value_count() != dr) return false;
    }
    return true;
}

}  // namespace clipmem::verify
