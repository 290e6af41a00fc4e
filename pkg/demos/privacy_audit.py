"""
Auditing what a database learns
===============================

A database's view is the query matrix it receives.  Up to the secret column
permutation and signs, that view should be the same whichever combination the
user wants.  We check this two ways, and break it on purpose twice.
"""

from pfrlab import SchemeParams, privacy_audit_statistical, privacy_audit_structural

p = SchemeParams(N=3, K=2, M=2, q=2)

#%%
# Structural check: one canonical fingerprint per database over all combinations.
rep = privacy_audit_structural(p)
for nu, fps in rep.fingerprints.items():
    print(nu, {db: h[:10] for db, h in fps.items()})
print("private:", rep.verdict)

#%%
# Without the symmetry sums the view depends on nu.
bad = privacy_audit_structural(p, skip_msym=True)
print("private without symmetry sums:", bad.verdict, " differing DBs:", bad.differing_dbs())

#%%
# Sampled check: fresh random assignments per session, TV distance between
# the observed views for two combinations.
print(privacy_audit_statistical(p, (1, 3), samples=300, seed=1))

#%%
# Sending rows in generation order gives the block structure away.
print(privacy_audit_statistical(p, (1, 3), samples=300, seed=1, leak=True))
