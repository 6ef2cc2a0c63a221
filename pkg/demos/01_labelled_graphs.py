"""
Labelled DAGs and context-specific independence
===============================================

An edge label lists the contexts in which that edge vanishes. Fixing the
context variable gives an ordinary DAG, and d-separation in that DAG gives
the independences that hold only in that context.
"""

# %%
from csicausal import csi_separated, d_separated, fixture, parse_ldag, project, serialize_ldag

text = """
graph trips {
  context M in {0, 1}
  node X
  node Z
  node Y
  latent U
  M -> X
  M -> Z
  X -> Y
  Z -> Y
  U -> X [absent: M=1]
  U -> Z [absent: M=1]
  X -> Z [absent: M=0]
}
"""
g = parse_ldag(text)
print(serialize_ldag(g))

# %%
# one ordinary DAG per context
for m in ("0", "1"):
    print(m, sorted(project(g, {"M": m}).edges))

# %%
# X and Z are dependent through U in context 0, and through X -> Z in context 1
print(csi_separated(g, ["X"], ["Z"], ["M", "U"], {"M": "0"}))  # True
print(csi_separated(g, ["X"], ["Z"], ["M", "U"], {"M": "1"}))  # False

# %%
# the bundled fixtures include the expenditure graph with latent confounders U1, U2
expenditure = fixture("expenditure")
d0 = project(expenditure, {"M": "0"})
print(d_separated(d0, {"W"}, {"X"}, {"M", "U1", "Z"}))
