struct b { volatile int x : 3; };
void k(struct b v);
