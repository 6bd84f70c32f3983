struct s { int n; int a[]; };
void f(struct s v);
void g(struct s *p) { f(*p); }
