import numpy as np
from sklearn.datasets import load_iris
from sklearn.svm import SVC
scale=np.array([1.75,2.8,1.1666666666666667,2.8]); off=np.array([-7.0,-5.6,-1.1666666666666667,0.0])
X,y=load_iris(return_X_y=True)
def q(x): return np.clip(np.floor(np.abs(x*scale+off)+0.5)*np.sign(x*scale+off),0,7)
Q=q(X)
AS,BS=1000.0,1000.0
names=["setosa","versicolor","virginica"]
rhos=[];groups=[]
for c in range(3):
    m=SVC(kernel="poly",degree=2,gamma=1.0,coef0=0.0,C=1.0).fit(Q,(y==c).astype(int)*2-1)
    # sklearn orders classes [-1, 1]; decision is positive for class +1
    coef=m.dual_coef_[0]; idx=m.support_
    rhos.append(-m.intercept_[0]); groups.append(list(zip(coef,idx)))
lines=["svm_type c_svc","kernel_type polynomial","degree 2","gamma 1","coef0 0","nr_class 3",
 f"total_sv {sum(len(g) for g in groups)}","rho "+" ".join(f"{r:.6g}" for r in rhos),
 "label "+" ".join(names),"nr_sv "+" ".join(str(len(g)) for g in groups),"SV"]
for g in groups:
    for a,i in g:
        lines.append(f"{a:.6g} "+" ".join(f"{k+1}:{X[i,k]:g}" for k in range(4)))
open("/root/crate/crates/core/assets/toy.model","w").write("\n".join(lines)+"\n")
# integer-model accuracy
def score(x):
    s=[]
    for c in range(3):
        tot=round(-rhos[c]*BS)
        for a,i in groups[c]:
            tot+=round(a*AS)*int(Q[i]@x)**2
        s.append(tot)
    return int(np.argmax(s))
pred=np.array([score(x) for x in Q]); print("int acc",(pred==y).mean(), [len(g) for g in groups])
