"""Two call-graph fragments with identical API structure but different trigger context.

The plain WL kernel sees them as very similar; the contextual variant tells them apart.
"""
from ctxwl import ContextualGraph, RelabelParams, kernel, relabel
from ctxwl.cwlk import render_label


def fragment(ctx, gid):
    # getLatitude -> writeBytes <- getLongitude
    return ContextualGraph.build(
        [(0, "getLatitude", [ctx]), (1, "getLongitude", [ctx]), (2, "writeBytes", [ctx])],
        [(0, 2), (1, 2)], graph_id=gid)


leaky = fragment("user-unaware", "background-leak")
benign = fragment("user-aware", "weather-widget")

for h in (0, 1, 2):
    plain = kernel(leaky, benign, RelabelParams(h=h, contextual=False))
    ctx = kernel(leaky, benign, RelabelParams(h=h))
    print(f"h={h}: plain WL kernel = {plain}, contextual kernel = {ctx}")

# the features each graph contributes at depth 1
seq = relabel(leaky, RelabelParams(h=1))
print("\nfeatures of", leaky.graph_id)
for lab in sorted(set(seq.gamma[1])):
    print("  ", render_label(lab))
