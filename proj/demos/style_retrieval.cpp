// Trains the hybrid model on a reduced benchmark for a few epochs and prints
// per-style retrieval before and after.

#include <cstdio>

#include "hystar/hystar.hpp"

using namespace hystar;

namespace {

void report(const char* tag, const RetrievalMetrics& m) {
    std::printf("%-8s", tag);
    for (const auto& s : m.styles) std::printf("  %s top1 %5.1f top5 %5.1f", s.style.c_str(), s.top1, s.top5);
    std::printf("  | mean top1 %5.1f\n", m.mean_top1);
}

} // namespace

int main() {
    DatasetConfig dc;
    dc.n_classes = 10;
    dc.samples_per_class_per_style = 10;
    const StyleDataset ds = generate(dc);
    std::printf("%zu items, %zu styles\n", ds.items.size(), ds.styles.size());

    EncoderConfig ec;
    Model<float> model(ec, 0);
    TrainConfig tc;
    tc.epochs = 6;
    tc.eval_every = 2;
    tc.lr_static = 1e-2;
    tc.lr_hyper = 1e-3;
    model.encoder.set_ablation_mode(tc.mode);
    report("init", evaluate(model, ds));
    train(model, ds, tc, {}, [](const EpochRecord& r) {
        std::printf("epoch %zu loss %.4f\n", r.epoch, r.mean_loss);
        if (r.evaluated) report("eval", r.metrics);
    });
}
