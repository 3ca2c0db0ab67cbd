"""Synthetic corpus -> training -> chunked embeddings -> enrollment -> trial scores -> EER/ACC.

Run: python3 demos/verification_pipeline.py
Takes a few seconds on one core.
"""
import numpy as np

from lgmsv.data import SynthConfig, enrollment_split, make_trials, synth_corpus
from lgmsv.evaluation import ScoreSet, acc, det_points, eer
from lgmsv.pipeline import enroll_embeddings, pooled_whitening, score, utterance_embedding
from lgmsv.trainer import TrainConfig, train

corpus = synth_corpus(SynthConfig(seed=7))
print(len(corpus.train_speakers), "train speakers,", len(corpus.test_speakers), "test speakers")

model, gm, report = train(TrainConfig(alpha=1.0, epochs=10), corpus)
print(f"epoch loss {report.epoch_mean_loss(0):.3f} -> {report.epoch_mean_loss(9):.3f}, "
      f"train acc {report.epoch_accuracy[-1]:.2f}, {report.wall_clock:.1f}s")

# %% embeddings: utterances longer than chunk_frames are split, embedded and averaged
enroll_map, probes = enrollment_split(corpus, 3)
embs = {u: utterance_embedding(model, corpus.features[u], 32)
        for u in [u for us in enroll_map.values() for u in us] + probes}
speakers = {s: enroll_embeddings(s, [embs[u] for u in us]) for s, us in enroll_map.items()}

# %% score every trial with both backends
trials = make_trials(corpus, 3)
W = pooled_whitening(gm)
for method in ("cosine", "neg_mahalanobis"):
    vals = [score(speakers[t.enroll_id], embs[t.test_id], method, W) for t in trials]
    ss = ScoreSet.from_trials(trials, vals)
    a, thr = acc(ss)
    print(f"{method:<16s} EER {eer(ss).eer:.4f}  ACC {a:.4f} (threshold {thr:.3f})")

pts = det_points(ss, include_eer=True)
print("DET points:", len(pts), "first", np.round(pts[0], 3), "last", np.round(pts[-1], 3))
