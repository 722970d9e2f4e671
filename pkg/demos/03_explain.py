"""Which contextual features drive a detection, per graph and per family."""
from ctxwl import ConfidenceWeighted, RelabelParams, Vocabulary, default_scenario, explain_prediction, \
    family_report, generate, run_online
from ctxwl.cwlk import counts_to_vector, label_counts
from ctxwl.harness import prepare

p = RelabelParams(h=2)
sc = default_scenario(days=40, seed=1)
stream = prepare(generate(sc), p)
vocab, model = Vocabulary(), ConfidenceWeighted()
run_online(stream, model, p, vocab=vocab)

exps = []
for s in stream.samples:
    if s.family:
        x, _ = counts_to_vector(label_counts(s.payload, p), vocab, frozen=True)
        exps.append(explain_prediction(model, x, vocab, nu=5, graph_id=s.id, family=s.family))

e = exps[-1]
print(f"graph {e.graph_id} ({e.family}): score {e.score:+.3f}, prediction {e.y_hat:+d}")
for c in e.contributions:
    print(f"  {c.value:+.3f}  {c.label}")
print(f"sum of all contributions {e.total():+.6f} equals the score exactly: {e.total() == e.score}")

for fam in sc.families:
    print(f"\nfamily {fam.name}: top features by mean contribution")
    for c in family_report(exps, fam.name, nu=3, vocab=vocab):
        print(f"  {c.value:+.3f}  {c.label}")
