# Independent re-implementation of the simulated stream, used to pin the
# cross-platform values in test_sim.cpp.
M=(1<<64)-1
def sm(s):
    s=(s+0x9e3779b97f4a7c15)&M
    z=s
    z=((z^(z>>30))*0xbf58476d1ce4e5b9)&M
    z=((z^(z>>27))*0x94d049bb133111eb)&M
    return s, z^(z>>31)
def mix2(a,b):
    s=a^((b+0x9e3779b97f4a7c15+((a<<6)&M)+(a>>2))&M)
    return sm(s)[1]
def mix(*xs):
    a=xs[0]
    for b in xs[1:]:
        a=mix2(a,b)
    return a
class St:
    def __init__(s,k): s.s=k
    def u64(s):
        s.s,v=sm(s.s); return v
    def uni(s): return (s.u64()>>11)*2.0**-53
    def normal(s):
        t=0.0
        for i in range(12): t+=s.uni()
        return t-6.0
G=0x67656e65
for seed,shot,slot in [(1,1,0),(1,1,1),(1,1,2),(42,3,1)]:
    z=St(mix(seed,G,shot,slot)).normal()
    lat=min(100,max(0,0.6*55+0.4*55+12*z-5))
    print(seed,shot,slot,repr(z),repr(lat))
