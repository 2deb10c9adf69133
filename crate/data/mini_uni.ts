@problemName MiniUni
@univariate true
@classLabel true 1 2 3
@data
0.5,1.5,2.5,-0.5:1
1,1,1,2:3
-2.25,0,0.125,4:2
