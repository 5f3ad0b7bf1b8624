// Trains a small Modurec model and prints test RMSE.
//
//   quickstart [ml-100k directory]
//
// Without a directory a random toy problem is used instead.

#include "modurec/modurec.hpp"

#include <iostream>

using namespace modurec;

int main(int argc, char** argv) {
    TrainConfig cfg;
    cfg.model.variant = Variant::DT;
    cfg.model.orientation = Orientation::Transposed;
    cfg.model.latent_dim = 100;
    cfg.learning_rate = 3e-3;
    cfg.weight_decay = 1e-3;
    cfg.epochs = 40;

    SplitBundle split;
    FeatureMatrices features;
    if (argc > 1) {
        const std::string dir = argv[1];
        RatingDataset full;
        std::tie(full, features) = parse_ml100k(dir + "/u.data", dir + "/u.user", dir + "/u.item");
        split = load_ml100k_split(dir + "/u1.base", dir + "/u1.test", 0.1, cfg.seed, &full);
    } else {
        GradCheckSize size;
        size.users = 60;
        size.items = 80;
        RatingDataset full;
        std::tie(split, features) = synthetic_problem(size, 1);
        full = split.train;
        split = random_split(full, 0.1, 0.1, 1);
        cfg.model.latent_dim = 10;
        cfg.epochs = 200;
    }

    const auto report = train<float>(split, features, cfg, [](const EpochRecord& e) {
        if (e.epoch % 10 == 0) std::cout << "epoch " << e.epoch << "  holdout RMSE " << e.holdout_rmse << '\n';
    });
    std::cout << "best epoch " << report.best_epoch << ", test RMSE " << report.test_rmse << '\n';
    return 0;
}
