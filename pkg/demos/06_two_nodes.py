"""Alice and Bob compare a sample of the key over the classical channel."""
# %%
from polqkd.protocol import SessionConfig
from polqkd.twonode import run_two_node

if __name__ == "__main__":
    cfg = SessionConfig(seed=27)
    mem = run_two_node(cfg, "memory")
    print("in memory:", mem.errors, "/", mem.compared, "qber", mem.qber)

    # %%
    sock = run_two_node(cfg, "socket")
    print("over TCP: ", sock.errors, "/", sock.compared, "qber", sock.qber)
    print("identical frames:", mem.bob_frames == sock.bob_frames and mem.alice_frames == sock.alice_frames)
    print(mem.bob_frames[0], mem.bob_frames[1], mem.alice_frames[1][:60], sep="\n")
