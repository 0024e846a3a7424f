#pragma once

// Annotation-delay search: for each candidate delay N, fit a frame-wise
// ridge regressor from [audio | visual] features at frame t to the label at
// frame t + N and score it by cross-validated CCC over the training
// recordings.

#include <cafusion/data.hpp>

#include <Eigen/Dense>

namespace cafusion {

struct DelaySearchOptions {
    Target target = Target::valence;
    double ridge = 1e-3;     // relative to the mean Gram diagonal
    std::size_t folds = 3;   // recording-level folds, capped by recording count
};

struct DelaySearchResult {
    std::size_t best = 0;
    std::vector<std::pair<std::size_t, double>> scores;  // (candidate, mean CCC)
};

namespace detail {

struct DesignBlock {
    Eigen::MatrixXd x;  // T x (D + 1), standardized features plus a bias column
    Eigen::VectorXd y;  // T labels
};

}  // namespace detail

inline DelaySearchResult delay_search(const std::vector<const Recording*>& train, std::vector<std::size_t> candidates,
                                      const DelaySearchOptions& opt = {}) {
    if (candidates.empty()) throw std::invalid_argument("delay_search: no candidate delays");
    if (train.empty()) throw std::invalid_argument("delay_search: no training recordings");
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    std::size_t min_len = std::numeric_limits<std::size_t>::max();
    for (const auto* r : train) min_len = std::min(min_len, r->length());
    if (candidates.back() + 2 >= min_len)
        throw std::invalid_argument("delay_search: candidate " + std::to_string(candidates.back()) +
                                    " too long for shortest recording (" + std::to_string(min_len) + " frames)");

    const std::size_t da = train.front()->audio.cols(), dv = train.front()->visual.cols();
    const std::size_t D = da + dv;

    // Standardize with statistics over all training frames.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(D));
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(D));
    double n = 0;
    for (const auto* r : train) {
        for (std::size_t t = 0; t < r->length(); ++t) {
            for (std::size_t k = 0; k < da; ++k) mean[k] += r->audio(t, k), sq[k] += r->audio(t, k) * r->audio(t, k);
            for (std::size_t k = 0; k < dv; ++k)
                mean[da + k] += r->visual(t, k), sq[da + k] += r->visual(t, k) * r->visual(t, k);
        }
        n += static_cast<double>(r->length());
    }
    mean /= n;
    Eigen::VectorXd scale(D);
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(D); ++k) {
        const double var = sq[k] / n - mean[k] * mean[k];
        scale[k] = var > 1e-24 ? 1.0 / std::sqrt(var) : 0.0;
    }

    // Pieces: whole recordings, or two contiguous halves of a lone recording.
    struct Piece {
        const Recording* rec;
        std::size_t begin, end;
    };
    std::vector<Piece> pieces;
    if (train.size() == 1) {
        const auto T = train.front()->length();
        pieces = {{train.front(), 0, T / 2}, {train.front(), T / 2, T}};
    } else {
        for (const auto* r : train) pieces.push_back({r, 0, r->length()});
    }
    std::vector<detail::DesignBlock> blocks;
    for (const auto& p : pieces) {
        detail::DesignBlock b;
        const auto T = static_cast<Eigen::Index>(p.end - p.begin);
        b.x.resize(T, static_cast<Eigen::Index>(D + 1));
        b.y.resize(T);
        const auto& lab = p.rec->labels(opt.target);
        for (Eigen::Index t = 0; t < T; ++t) {
            const std::size_t src = p.begin + static_cast<std::size_t>(t);
            for (std::size_t k = 0; k < da; ++k) b.x(t, k) = (p.rec->audio(src, k) - mean[k]) * scale[k];
            for (std::size_t k = 0; k < dv; ++k)
                b.x(t, da + k) = (p.rec->visual(src, k) - mean[da + k]) * scale[da + k];
            b.x(t, D) = 1.0;
            b.y[t] = lab[src];
        }
        blocks.push_back(std::move(b));
    }
    const std::size_t folds = std::min<std::size_t>(std::max<std::size_t>(2, opt.folds), blocks.size());
    const auto P = static_cast<Eigen::Index>(D + 1);

    // Full Gram per block; a delay N drops the block's last N rows.
    std::vector<Eigen::MatrixXd> gram;
    for (const auto& b : blocks) gram.push_back(b.x.transpose() * b.x);

    DelaySearchResult res;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t N : candidates) {
        const auto Ni = static_cast<Eigen::Index>(N);
        std::vector<Eigen::MatrixXd> g(blocks.size());
        std::vector<Eigen::VectorXd> xty(blocks.size());
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const auto& B = blocks[b];
            const auto T = B.x.rows();
            const auto tail = B.x.bottomRows(Ni);
            g[b] = gram[b] - tail.transpose() * tail;
            xty[b] = B.x.topRows(T - Ni).transpose() * B.y.tail(T - Ni);
        }
        double score = 0.0;
        for (std::size_t f = 0; f < folds; ++f) {
            Eigen::MatrixXd G = Eigen::MatrixXd::Zero(P, P);
            Eigen::VectorXd r = Eigen::VectorXd::Zero(P);
            for (std::size_t b = 0; b < blocks.size(); ++b)
                if (b % folds != f) G += g[b], r += xty[b];
            const double lam = opt.ridge * std::max(1e-12, G.diagonal().mean());
            G.diagonal().array() += lam;
            const Eigen::VectorXd w = G.ldlt().solve(r);
            std::vector<double> pred, truth;
            for (std::size_t b = f; b < blocks.size(); b += folds) {
                const auto& B = blocks[b];
                const auto T = B.x.rows();
                const Eigen::VectorXd p = B.x.topRows(T - Ni) * w;
                pred.insert(pred.end(), p.data(), p.data() + p.size());
                truth.insert(truth.end(), B.y.data() + Ni, B.y.data() + T);
            }
            score += ccc(pred, truth);
        }
        score /= static_cast<double>(folds);
        res.scores.emplace_back(N, score);
        // Candidates ascend, so a strict improvement keeps ties on the smaller N.
        if (score > best_score + 1e-12) {
            best_score = score;
            res.best = N;
        }
    }
    return res;
}

inline DelaySearchResult delay_search(const std::vector<Recording>& train, std::vector<std::size_t> candidates,
                                      const DelaySearchOptions& opt = {}) {
    std::vector<const Recording*> ptrs;
    for (const auto& r : train) ptrs.push_back(&r);
    return delay_search(ptrs, std::move(candidates), opt);
}

}  // namespace cafusion
