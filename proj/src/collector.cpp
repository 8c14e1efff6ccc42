#include "gensel/collector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gensel/kernels.hpp"
#include "gensel/rng.hpp"
#include "gensel/stats.hpp"

namespace gensel {

std::vector<double> state_repr(const TabularDataset& ds, const TokenSequence& selected) {
    std::vector<double> state(kStateDim, 0.0);
    if (selected.empty()) return state;

    const Vocabulary vocab = ds.vocabulary();
    const std::size_t n = ds.n_samples();

    // rows: one 7-descriptive summary per selected column
    std::vector<std::array<double, 7>> per_column;
    per_column.reserve(selected.size());
    std::vector<double> col(n);
    for (TokenId t : selected) {
        const int c = vocab.column_for_token(t);
        for (std::size_t i = 0; i < n; ++i) col[i] = ds.features.at(i, static_cast<std::size_t>(c));
        per_column.push_back(stats::descriptives7(col));
    }

    // then summarize each descriptive kind across columns
    std::vector<double> kind(per_column.size());
    for (int k = 0; k < 7; ++k) {
        for (std::size_t c = 0; c < per_column.size(); ++c) kind[c] = per_column[c][static_cast<std::size_t>(k)];
        const auto summary = stats::descriptives7(kind);
        for (int s = 0; s < 7; ++s) state[static_cast<std::size_t>(k * 7 + s)] = summary[static_cast<std::size_t>(s)];
    }
    return state;
}

double subset_relevance(const TabularDataset& ds, const TokenSequence& selected) {
    if (selected.empty()) return 0.0;
    const Vocabulary vocab = ds.vocabulary();
    const std::size_t n = ds.n_samples();
    std::vector<double> y(n), col(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<double>(ds.labels[i]);
    double acc = 0.0;
    for (TokenId t : selected) {
        const int c = vocab.column_for_token(t);
        for (std::size_t i = 0; i < n; ++i) col[i] = ds.features.at(i, static_cast<std::size_t>(c));
        acc += std::fabs(stats::pearson(col.data(), y.data(), n));
    }
    return acc / static_cast<double>(selected.size());
}

double subset_redundancy(const TabularDataset& ds, const TokenSequence& selected) {
    if (selected.size() < 2) return 0.0;
    const Vocabulary vocab = ds.vocabulary();
    const std::size_t n = ds.n_samples();
    std::vector<std::vector<double>> cols(selected.size(), std::vector<double>(n));
    for (std::size_t a = 0; a < selected.size(); ++a) {
        const int c = vocab.column_for_token(selected[a]);
        for (std::size_t i = 0; i < n; ++i) cols[a][i] = ds.features.at(i, static_cast<std::size_t>(c));
    }
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < cols.size(); ++a) {
        for (std::size_t b = a + 1; b < cols.size(); ++b) {
            acc += std::fabs(stats::pearson(cols[a].data(), cols[b].data(), n));
            ++pairs;
        }
    }
    return acc / static_cast<double>(pairs);
}

double reward(double u, double relevance, double redundancy, const CollectorConfig& cfg) {
    return u + cfg.lambda_relevance * relevance - cfg.lambda_redundancy * redundancy;
}

namespace {

// Q-network: state -> hidden (ReLU) -> 2 action values
struct QNet {
    Mat w1, b1, w2, b2;

    void init(int hidden, Rng& rng) {
        w1 = Mat(kStateDim, static_cast<std::size_t>(hidden));
        b1 = Mat(1, static_cast<std::size_t>(hidden));
        w2 = Mat(static_cast<std::size_t>(hidden), 2);
        b2 = Mat(1, 2);
        const double s1 = std::sqrt(6.0 / static_cast<double>(kStateDim + hidden));
        const double s2 = std::sqrt(6.0 / static_cast<double>(hidden + 2));
        for (auto& v : w1.data) v = rng.uniform(-s1, s1);
        for (auto& v : w2.data) v = rng.uniform(-s2, s2);
    }

    void forward(const double* state, double* q, double* hidden_buf) const {
        const auto& k = kernels::ops();
        const std::size_t h = w1.cols;
        for (std::size_t j = 0; j < h; ++j) hidden_buf[j] = b1.data[j];
        k.gemm(false, false, 1, h, kStateDim, 1.0, state, kStateDim, w1.data.data(), h, 1.0, hidden_buf, h);
        k.relu(hidden_buf, hidden_buf, h);
        q[0] = b2.data[0];
        q[1] = b2.data[1];
        k.gemm(false, false, 1, 2, h, 1.0, hidden_buf, h, w2.data.data(), 2, 1.0, q, 2);
    }
};

struct AdamState {
    Mat mw1, vw1, mb1, vb1, mw2, vw2, mb2, vb2;
    int step = 0;

    explicit AdamState(const QNet& net)
        : mw1(net.w1.rows, net.w1.cols), vw1(net.w1.rows, net.w1.cols),
          mb1(1, net.b1.cols), vb1(1, net.b1.cols),
          mw2(net.w2.rows, net.w2.cols), vw2(net.w2.rows, net.w2.cols),
          mb2(1, 2), vb2(1, 2) {}
};

struct Transition {
    std::vector<double> state;
    std::vector<std::uint8_t> actions;   // 1 = select
    double reward = 0.0;
    std::vector<double> next_state;
};

constexpr double kAdamB1 = 0.9, kAdamB2 = 0.999, kAdamEps = 1e-8;

// One gradient step on (q_online(s)[a] - y)^2 averaged over the minibatch.
void train_agent(QNet& net, AdamState& opt, const QNet& target,
                 const std::vector<const Transition*>& batch, std::size_t agent, double gamma,
                 double lr) {
    const auto& k = kernels::ops();
    const std::size_t h = net.w1.cols;
    const std::size_t bsz = batch.size();

    Mat gw1(kStateDim, h), gb1(1, h), gw2(h, 2), gb2(1, 2);
    std::vector<double> hidden(h), q(2), hidden_t(h), q_t(2), dh(h);

    const double inv_b = 1.0 / static_cast<double>(bsz);
    for (const Transition* tr : batch) {
        net.forward(tr->state.data(), q.data(), hidden.data());
        target.forward(tr->next_state.data(), q_t.data(), hidden_t.data());
        const double y = tr->reward + gamma * std::max(q_t[0], q_t[1]);
        const std::size_t a = tr->actions[agent];
        const double dq = 2.0 * (q[a] - y) * inv_b;

        // backward: dq at the taken action only
        gb2.data[a] += dq;
        for (std::size_t j = 0; j < h; ++j) {
            gw2.at(j, a) += hidden[j] * dq;
            dh[j] = net.w2.at(j, a) * dq;
        }
        for (std::size_t j = 0; j < h; ++j) {
            if (hidden[j] <= 0.0) dh[j] = 0.0;
        }
        k.vadd(dh.data(), gb1.data.data(), h);
        k.gemm(true, false, kStateDim, h, 1, 1.0, tr->state.data(), kStateDim, dh.data(), h, 1.0,
               gw1.data.data(), h);
    }

    ++opt.step;
    const double c1 = 1.0 / (1.0 - std::pow(kAdamB1, opt.step));
    const double c2 = 1.0 / (1.0 - std::pow(kAdamB2, opt.step));
    k.adam_step(net.w1.data.data(), opt.mw1.data.data(), opt.vw1.data.data(), gw1.data.data(),
                gw1.size(), lr, kAdamB1, kAdamB2, kAdamEps, c1, c2);
    k.adam_step(net.b1.data.data(), opt.mb1.data.data(), opt.vb1.data.data(), gb1.data.data(),
                gb1.size(), lr, kAdamB1, kAdamB2, kAdamEps, c1, c2);
    k.adam_step(net.w2.data.data(), opt.mw2.data.data(), opt.vw2.data.data(), gw2.data.data(),
                gw2.size(), lr, kAdamB1, kAdamB2, kAdamEps, c1, c2);
    k.adam_step(net.b2.data.data(), opt.mb2.data.data(), opt.vb2.data.data(), gb2.data.data(),
                gb2.size(), lr, kAdamB1, kAdamB2, kAdamEps, c1, c2);
}

} // namespace

CollectResult collect(const TabularDataset& ds, const CollectorConfig& cfg, const UtilityFn& utility_fn) {
    if (cfg.buffer_capacity == 0 || cfg.minibatch == 0) {
        throw ConfigError("collector: buffer and minibatch sizes must be positive");
    }
    if (cfg.epochs < 0) throw ConfigError("collector: epochs must be >= 0");

    const std::size_t n_agents = ds.n_features();
    const Vocabulary vocab = ds.vocabulary();
    const int decay = cfg.epsilon_decay_epochs >= 0 ? cfg.epsilon_decay_epochs
                                                    : std::max(1, cfg.epochs / 2);

    Rng rng(cfg.seed);
    std::vector<QNet> online(n_agents), target(n_agents);
    std::vector<AdamState> opt;
    opt.reserve(n_agents);
    for (std::size_t a = 0; a < n_agents; ++a) {
        Rng init_rng(derive_seed(cfg.seed, 1000 + a));
        online[a].init(cfg.agent_hidden, init_rng);
        target[a] = online[a];
        opt.emplace_back(online[a]);
    }

    std::vector<Transition> buffer;
    buffer.reserve(std::min<std::size_t>(cfg.buffer_capacity, 65536));
    std::size_t buffer_head = 0;

    CollectResult result;
    std::vector<double> state = state_repr(ds, {});
    std::vector<double> q(2), hidden(static_cast<std::size_t>(cfg.agent_hidden));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double frac = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(decay));
        const double eps = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;

        std::vector<std::uint8_t> actions(n_agents);
        TokenSequence subset;
        for (std::size_t a = 0; a < n_agents; ++a) {
            std::uint8_t act;
            if (rng.bernoulli(eps)) {
                act = static_cast<std::uint8_t>(rng.below(2));
            } else {
                online[a].forward(state.data(), q.data(), hidden.data());
                act = q[1] > q[0] ? 1 : 0;
            }
            actions[a] = act;
            if (act == 1) subset.push_back(vocab.token_for_column(static_cast<int>(a)));
        }

        double r, u = std::numeric_limits<double>::quiet_NaN();
        if (subset.empty()) {
            r = kEmptySubsetReward;
        } else {
            u = utility_fn(subset);
            r = reward(u, subset_relevance(ds, subset), subset_redundancy(ds, subset), cfg);
            result.records.push_back({subset, u});
        }
        result.episode_log.push_back({epoch, subset.size(), u, r, eps});

        std::vector<double> next_state = state_repr(ds, subset);
        Transition tr{std::move(state), std::move(actions), r, next_state};
        if (buffer.size() < cfg.buffer_capacity) {
            buffer.push_back(std::move(tr));
        } else {
            buffer[buffer_head] = std::move(tr);
            buffer_head = (buffer_head + 1) % cfg.buffer_capacity;
        }
        state = std::move(next_state);

        if (buffer.size() >= cfg.minibatch) {
            const auto idx = rng.sample_without_replacement(buffer.size(), cfg.minibatch);
            std::vector<const Transition*> batch;
            batch.reserve(idx.size());
            for (std::size_t i : idx) batch.push_back(&buffer[i]);
            for (std::size_t a = 0; a < n_agents; ++a) {
                train_agent(online[a], opt[a], target[a], batch, a, cfg.gamma, cfg.agent_lr);
            }
        }
        if ((epoch + 1) % cfg.target_sync_interval == 0) {
            for (std::size_t a = 0; a < n_agents; ++a) target[a] = online[a];
        }
    }
    return result;
}

std::vector<SubsetRecord> random_collect(const TabularDataset& ds, int epochs, std::uint64_t seed,
                                         const UtilityFn& utility_fn) {
    if (epochs < 0) throw ConfigError("random_collect: epochs must be >= 0");
    Rng rng(seed);
    const Vocabulary vocab = ds.vocabulary();
    const std::size_t n = ds.n_features();
    std::vector<SubsetRecord> records;
    records.reserve(static_cast<std::size_t>(epochs));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const std::size_t k = 1 + static_cast<std::size_t>(rng.below(n));
        const auto cols = rng.sample_without_replacement(n, k);
        TokenSequence seq;
        seq.reserve(k);
        for (std::size_t c : cols) seq.push_back(vocab.token_for_column(static_cast<int>(c)));
        std::sort(seq.begin(), seq.end());
        records.push_back({seq, utility_fn(seq)});
    }
    return records;
}

} // namespace gensel
