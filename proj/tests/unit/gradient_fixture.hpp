#pragma once

#include "helpers.hpp"
#include "thzce/measurement.hpp"
#include "thzce/training.hpp"

namespace testutil {

// Small random problem: S = 3, Q = 8, K = 2, M = 6, one-layer model.
struct GradientProblem
{
    Corpus corpus;
    std::vector<TrainingSample> samples;
    UnfoldedModel model;
    ConfigWeightTable table;

    explicit GradientProblem(std::uint64_t seed, int depth = 1, int count = 1)
    {
        Rng rng(seed);
        const int N = 10, K = 2, M = 6, S = 3, Q = 8, G = S * Q;
        corpus.S = S;
        corpus.Q = Q;
        for (int k = 0; k < K; ++k)
        {
            CMat A = random_cmat(rng, N, G);
            A.colwise().normalize();
            corpus.dictionary.push_back(A);
        }
        RMat W = generate_pilot_matrix(M, N, rng);
        corpus.setups.emplace(M, make_pilot_setup(W, corpus.dictionary));
        for (int i = 0; i < count; ++i)
        {
            CMat X = CMat::Zero(G, K);
            for (int g : {2, 11, 19})
                for (int k = 0; k < K; ++k)
                    X(g, k) = complex_normal(rng);
            CMat H = reconstruct(corpus.dictionary, X);
            CMat Y = observe(H, W, 0.1, rng);
            samples.push_back({H, corpus.setup(M).whitened.whiten(Y), M, 10.0});
        }
        model.S = S;
        model.Q = Q;
        for (int l = 0; l < depth; ++l)
        {
            LayerWeights w = LayerWeights::glorot(rng);
            for (Tensor *t : {&w.conv1_b, &w.fc1_b, &w.fc2_b})
            {
                std::normal_distribution<double> nd(0.0, 0.2);
                for (double &x : t->data)
                    x = nd(rng);
            }
            w.conv2_b[0] = 0.8;
            model.layers.push_back(w);
        }
        const ConfigKey key{M, 10.0};
        table = ConfigWeightTable::uniform(std::span(&key, 1), key);
    }
};

} // namespace testutil
